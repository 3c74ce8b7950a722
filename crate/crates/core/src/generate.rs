//! Rule-based implication generation: `(question, answer, type) -> yes/no question`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, JsonDefect, Result};
use crate::io::{ImplicationRecord, QAPair};
use crate::question::{classify, AttributeSlot, Copula, ParsedQuestion, QuestionKind};
use crate::text::{normalize, parse_count, pluralize, singularize, TokenSeq};

/// The three-way selector choosing which kind of implication to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImplicationType {
    Logeq,
    Nec,
    Mutex,
}

impl ImplicationType {
    /// Generation and reporting order.
    pub const ALL: [ImplicationType; 3] = [ImplicationType::Logeq, ImplicationType::Nec, ImplicationType::Mutex];

    pub fn as_str(self) -> &'static str {
        match self {
            ImplicationType::Logeq => "logeq",
            ImplicationType::Nec => "nec",
            ImplicationType::Mutex => "mutex",
        }
    }

    /// Offset added to `source_question_id * 10` to form implication ids.
    pub fn id_offset(self) -> u64 {
        match self {
            ImplicationType::Logeq => 1,
            ImplicationType::Nec => 2,
            ImplicationType::Mutex => 3,
        }
    }

    /// The answer every implication of this type carries.
    pub fn implied_answer(self) -> ImpliedAnswer {
        match self {
            ImplicationType::Logeq | ImplicationType::Nec => ImpliedAnswer::Yes,
            ImplicationType::Mutex => ImpliedAnswer::No,
        }
    }

    /// Parses a comma-separated list such as `logeq,mutex`.
    pub fn parse_list(s: &str) -> Result<Vec<ImplicationType>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let t: ImplicationType = part.parse()?;
            if !out.contains(&t) {
                out.push(t);
            }
        }
        out.sort();
        Ok(out)
    }
}

impl fmt::Display for ImplicationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ImplicationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logeq" => Ok(ImplicationType::Logeq),
            "nec" => Ok(ImplicationType::Nec),
            "mutex" => Ok(ImplicationType::Mutex),
            other => Err(Error::MalformedJson(JsonDefect::InvalidEnum {
                field: "itype".into(),
                value: other.into(),
            })),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImpliedAnswer {
    Yes,
    No,
}

impl ImpliedAnswer {
    pub fn as_str(self) -> &'static str {
        match self {
            ImpliedAnswer::Yes => "yes",
            ImpliedAnswer::No => "no",
        }
    }
}

impl fmt::Display for ImpliedAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ImpliedAnswer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yes" => Ok(ImpliedAnswer::Yes),
            "no" => Ok(ImpliedAnswer::No),
            other => Err(Error::MalformedJson(JsonDefect::InvalidEnum {
                field: "answer".into(),
                value: other.into(),
            })),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Implication {
    pub source_question_id: u64,
    pub itype: ImplicationType,
    pub question: TokenSeq,
    pub answer: ImpliedAnswer,
    /// Display form: first letter capitalized, trailing `?`.
    pub surface: String,
}

impl Implication {
    pub fn implication_id(&self) -> u64 {
        implication_id(self.source_question_id, self.itype)
    }

    pub fn to_record(&self, image_id: u64) -> ImplicationRecord {
        ImplicationRecord {
            implication_id: self.implication_id(),
            source_question_id: self.source_question_id,
            image_id,
            itype: self.itype,
            question: self.surface.clone(),
            answer: self.answer,
        }
    }
}

pub fn implication_id(source_question_id: u64, itype: ImplicationType) -> u64 {
    source_question_id * 10 + itype.id_offset()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum SkipReason {
    YesNoSource,
    ZeroCount,
    UnsupportedKind,
    NonNumericCountAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationOutcome {
    pub produced: Vec<Implication>,
    pub skipped_reason: Option<SkipReason>,
}

const COLORS: &[&str] = &[
    "white", "black", "red", "blue", "green", "yellow", "brown", "gray", "orange", "pink", "purple", "silver",
];
const SPORTS: &[&str] = &[
    "tennis",
    "baseball",
    "soccer",
    "frisbee",
    "skateboarding",
    "surfing",
    "skiing",
    "snowboarding",
    "football",
    "basketball",
    "volleyball",
    "golf",
];
const ANIMALS: &[&str] = &[
    "dog", "cat", "horse", "cow", "sheep", "elephant", "giraffe", "zebra", "bear", "bird",
];
const BRANDS: &[&str] = &[
    "nike",
    "adidas",
    "apple",
    "samsung",
    "sony",
    "dell",
    "toyota",
    "honda",
    "pepsi",
    "coca-cola",
];

/// Fixed distractor list for a slot; `kind` and `type` have none.
pub fn slot_values(slot: AttributeSlot) -> Option<&'static [&'static str]> {
    match slot {
        AttributeSlot::Color => Some(COLORS),
        AttributeSlot::Sport => Some(SPORTS),
        AttributeSlot::Animal => Some(ANIMALS),
        AttributeSlot::Brand => Some(BRANDS),
        AttributeSlot::Kind | AttributeSlot::Type => None,
    }
}

/// The entry after `answer` in the slot list, wrapping around; the first
/// entry when `answer` is not listed.
pub fn distractor(slot: AttributeSlot, answer: &str) -> Option<&'static str> {
    let values = slot_values(slot)?;
    let next = match values.iter().position(|v| *v == answer) {
        Some(i) => values[(i + 1) % values.len()],
        None => values[0],
    };
    (next != answer).then_some(next)
}

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "his", "her", "its", "their", "my", "your", "our", "it", "he",
    "she", "they", "them",
];

fn head_noun(subject: &TokenSeq) -> Option<&str> {
    let tokens = subject.tokens();
    let mut end = tokens.len();
    // "the men playing" -> "men"
    while end > 1 && tokens[end - 1].ends_with("ing") {
        end -= 1;
    }
    let head = tokens[end - 1].as_str();
    (!DETERMINERS.contains(&head)).then_some(head)
}

fn indefinite_article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

fn build(source_question_id: u64, itype: ImplicationType, words: Vec<String>) -> Result<Implication> {
    let question = TokenSeq::from_tokens(words)?;
    let joined = question.joined();
    let mut chars = joined.chars();
    let surface = match chars.next() {
        Some(c) => format!("{}{}?", c.to_uppercase(), chars.as_str()),
        None => return Err(Error::EmptyQuestion),
    };
    Ok(Implication {
        source_question_id,
        itype,
        question,
        answer: itype.implied_answer(),
        surface,
    })
}

fn words(parts: &[&str], tail: &TokenSeq) -> Vec<String> {
    parts
        .iter()
        .map(|s| (*s).to_owned())
        .chain(tail.tokens().iter().cloned())
        .collect()
}

fn count_statement(n: u64, subject: &TokenSeq) -> Vec<String> {
    let n_str = n.to_string();
    if n == 1 {
        words(&["is", "there", &n_str], &singularize(subject))
    } else {
        words(&["are", "there", &n_str], &pluralize(&singularize(subject)))
    }
}

fn require_subject(pq: &ParsedQuestion) -> Result<&TokenSeq> {
    pq.subject
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("{} question without subject", pq.kind)))
}

/// Generates one implication of the selected type, or `None` when the
/// combination of question kind, type and answer has no rule.
pub fn generate(
    source_question_id: u64,
    pq: &ParsedQuestion,
    answer: &str,
    knob: ImplicationType,
) -> Result<Option<Implication>> {
    match pq.kind {
        QuestionKind::Count => {
            let subject = require_subject(pq)?;
            let n = match parse_count(answer) {
                Some(n) if n >= 1 => n,
                _ => return Ok(None),
            };
            let w = match knob {
                ImplicationType::Logeq => count_statement(n, subject),
                ImplicationType::Mutex => count_statement(n + 1, subject),
                ImplicationType::Nec => words(&["are", "there", "any"], &pluralize(&singularize(subject))),
            };
            build(source_question_id, knob, w).map(Some)
        }
        QuestionKind::Attribute(slot) => {
            let subject = require_subject(pq)?;
            let copula = pq
                .copula
                .ok_or_else(|| Error::InvalidInput("attribute question without copula".into()))?;
            if parse_count(answer).is_some() {
                return Ok(None);
            }
            let value = match normalize(answer) {
                Ok(v) => v,
                Err(_) => return Ok(None),
            };
            let value_key = value.joined();
            if value_key == "yes" || value_key == "no" {
                return Ok(None);
            }
            let w = match knob {
                ImplicationType::Logeq => {
                    let mut w = words(&[copula.as_str()], subject);
                    w.extend(value.tokens().iter().cloned());
                    w
                }
                ImplicationType::Mutex => {
                    let Some(d) = distractor(slot, &value_key) else {
                        return Ok(None);
                    };
                    let mut w = words(&[copula.as_str()], subject);
                    w.extend(d.split_whitespace().map(str::to_owned));
                    w
                }
                ImplicationType::Nec => {
                    let Some(head) = head_noun(subject) else {
                        return Ok(None);
                    };
                    let head = TokenSeq::from_tokens([head])?;
                    match copula {
                        Copula::Is => {
                            let first = subject.first();
                            let det = if first == "a" || first == "an" {
                                first
                            } else {
                                indefinite_article(head.first())
                            };
                            words(&["is", "there", det], &singularize(&head))
                        }
                        Copula::Are => words(&["are", "there"], &pluralize(&singularize(&head))),
                    }
                }
            };
            build(source_question_id, knob, w).map(Some)
        }
        QuestionKind::YesNo | QuestionKind::Other => Ok(None),
    }
}

/// Applies [`generate`] for every type in `types` (in `ImplicationType::ALL`
/// order) and records why nothing was produced, if so.
pub fn generate_types(
    source_question_id: u64,
    pq: &ParsedQuestion,
    answer: &str,
    types: &[ImplicationType],
) -> Result<GenerationOutcome> {
    let mut produced = Vec::new();
    for knob in ImplicationType::ALL.into_iter().filter(|t| types.contains(t)) {
        if let Some(imp) = generate(source_question_id, pq, answer, knob)? {
            produced.push(imp);
        }
    }
    let skipped_reason = if produced.is_empty() {
        Some(match pq.kind {
            QuestionKind::YesNo => SkipReason::YesNoSource,
            QuestionKind::Count => match parse_count(answer) {
                Some(0) => SkipReason::ZeroCount,
                Some(_) => SkipReason::UnsupportedKind,
                None => SkipReason::NonNumericCountAnswer,
            },
            QuestionKind::Attribute(_) | QuestionKind::Other => SkipReason::UnsupportedKind,
        })
    } else {
        None
    };
    Ok(GenerationOutcome {
        produced,
        skipped_reason,
    })
}

pub fn generate_all(source_question_id: u64, pq: &ParsedQuestion, answer: &str) -> Result<GenerationOutcome> {
    generate_types(source_question_id, pq, answer, &ImplicationType::ALL)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageStats {
    pub total_pairs: usize,
    pub eligible_pairs: usize,
    pub eligible_fraction: f64,
    /// Pairs without an answer; they count as ineligible.
    pub unanswered: usize,
    pub per_kind_counts: BTreeMap<String, usize>,
    pub per_kind_eligible: BTreeMap<String, usize>,
    pub per_type_counts: BTreeMap<ImplicationType, usize>,
    pub skipped: BTreeMap<SkipReason, usize>,
}

struct PairResult {
    kind: &'static str,
    answered: bool,
    outcome: GenerationOutcome,
    image_id: u64,
}

fn process_pair(pair: &QAPair, types: &[ImplicationType]) -> Result<PairResult> {
    let pq = match normalize(&pair.question) {
        Ok(q) => Some(classify(&q)?),
        Err(Error::EmptyQuestion) => None,
        Err(e) => return Err(e),
    };
    let kind = pq.as_ref().map_or("other", |p| p.kind.tag());
    let (answered, outcome) = match (&pq, &pair.answer) {
        (Some(pq), Some(answer)) => (true, generate_types(pair.question_id, pq, answer, types)?),
        (None, answer) => (
            answer.is_some(),
            GenerationOutcome {
                produced: Vec::new(),
                skipped_reason: Some(SkipReason::UnsupportedKind),
            },
        ),
        (Some(_), None) => (
            false,
            GenerationOutcome {
                produced: Vec::new(),
                skipped_reason: None,
            },
        ),
    };
    Ok(PairResult {
        kind,
        answered,
        outcome,
        image_id: pair.image_id,
    })
}

/// Generates implication records for a corpus together with coverage
/// statistics. Output order follows input order regardless of the size of
/// the rayon pool this runs in.
pub fn build_implications(
    corpus: &[QAPair],
    types: &[ImplicationType],
) -> Result<(Vec<ImplicationRecord>, CoverageStats)> {
    let results: Vec<PairResult> = corpus
        .par_iter()
        .map(|p| process_pair(p, types))
        .collect::<Result<_>>()?;

    let mut stats = CoverageStats {
        total_pairs: corpus.len(),
        eligible_pairs: 0,
        eligible_fraction: 0.0,
        unanswered: 0,
        per_kind_counts: BTreeMap::new(),
        per_kind_eligible: BTreeMap::new(),
        per_type_counts: types.iter().map(|t| (*t, 0)).collect(),
        skipped: BTreeMap::new(),
    };
    let mut records = Vec::new();
    for r in results {
        *stats.per_kind_counts.entry(r.kind.to_owned()).or_insert(0) += 1;
        if !r.answered {
            stats.unanswered += 1;
        }
        if let Some(reason) = r.outcome.skipped_reason {
            *stats.skipped.entry(reason).or_insert(0) += 1;
        }
        if !r.outcome.produced.is_empty() {
            stats.eligible_pairs += 1;
            *stats.per_kind_eligible.entry(r.kind.to_owned()).or_insert(0) += 1;
        }
        for imp in r.outcome.produced {
            *stats.per_type_counts.entry(imp.itype).or_insert(0) += 1;
            records.push(imp.to_record(r.image_id));
        }
    }
    if stats.total_pairs > 0 {
        stats.eligible_fraction = stats.eligible_pairs as f64 / stats.total_pairs as f64;
    }
    Ok((records, stats))
}

/// Fraction of QA pairs yielding at least one implication, with per-kind breakdown.
pub fn coverage(corpus: &[QAPair]) -> Result<CoverageStats> {
    build_implications(corpus, &ImplicationType::ALL).map(|(_, stats)| stats)
}

//! Readers and writers for VQA questions/annotations, prediction results,
//! implication datasets, rephrasing groups and attention maps.
//!
//! Writers emit compact JSON with a fixed key order so that
//! `write(read(write(x)))` is byte-identical to `write(x)`. Readers keep
//! records in file order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, JsonDefect, Result};
use crate::generate::{ImplicationType, ImpliedAnswer};
use crate::metrics::vqa::{AnswerScores, AttentionMap, PredictionSet};

/// An original question with its (optional) ground-truth answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAPair {
    pub question_id: u64,
    pub image_id: u64,
    pub question: String,
    /// Canonical answer (`multiple_choice_answer`), absent until annotations are merged.
    pub answer: Option<String>,
    /// The ten human answers, when known.
    pub human_answers: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub question_id: u64,
    pub image_id: u64,
    pub canonical: String,
    pub human_answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImplicationRecord {
    pub implication_id: u64,
    pub source_question_id: u64,
    pub image_id: u64,
    pub itype: ImplicationType,
    pub question: String,
    pub answer: ImpliedAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RephrasingGroup {
    pub original_question_id: u64,
    pub rephrasing_ids: Vec<u64>,
}

/// Rephrasing groups plus the rephrased questions themselves.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Rephrasings {
    pub groups: Vec<RephrasingGroup>,
    pub questions: Vec<QAPair>,
}

// ---------------------------------------------------------------------------
// JSON field access

fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::MalformedJson(JsonDefect::Syntax(e.to_string())))
}

fn as_object<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::structure(format!("{what} must be a JSON object")))
}

fn top_array<'a>(root: &'a Value, key: &str) -> Result<&'a Vec<Value>> {
    as_object(root, "document")?
        .get(key)
        .ok_or_else(|| Error::structure(format!("missing top-level \"{key}\" array")))?
        .as_array()
        .ok_or_else(|| Error::structure(format!("\"{key}\" must be an array")))
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| Error::MissingField(name.to_owned()))
}

fn u64_field(obj: &Map<String, Value>, name: &str) -> Result<u64> {
    field(obj, name)?
        .as_u64()
        .ok_or_else(|| Error::structure(format!("`{name}` must be a non-negative integer")))
}

fn str_field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a str> {
    field(obj, name)?
        .as_str()
        .ok_or_else(|| Error::structure(format!("`{name}` must be a string")))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    // serializing plain structs/maps of strings and numbers cannot fail
    serde_json::to_string(value).expect("serializable value")
}

fn check_unique(seen: &mut HashSet<u64>, id: u64) -> Result<()> {
    if seen.insert(id) {
        Ok(())
    } else {
        Err(Error::DuplicateId(id))
    }
}

// ---------------------------------------------------------------------------
// VQA questions

fn question_from_object(obj: &Map<String, Value>) -> Result<QAPair> {
    Ok(QAPair {
        question_id: u64_field(obj, "question_id")?,
        image_id: u64_field(obj, "image_id")?,
        question: str_field(obj, "question")?.to_owned(),
        answer: None,
        human_answers: None,
    })
}

/// Parses a VQA questions document: `{"questions": [{question_id, image_id, question}, ...]}`.
pub fn parse_vqa_questions(text: &str) -> Result<Vec<QAPair>> {
    let root = parse_json(text)?;
    let mut seen = HashSet::new();
    top_array(&root, "questions")?
        .iter()
        .map(|v| {
            let q = question_from_object(as_object(v, "question record")?)?;
            check_unique(&mut seen, q.question_id)?;
            Ok(q)
        })
        .collect()
}

pub fn read_vqa_questions(path: impl AsRef<Path>) -> Result<Vec<QAPair>> {
    parse_vqa_questions(&read_text(path.as_ref())?)
}

#[derive(Serialize)]
struct QuestionOut<'a> {
    question_id: u64,
    image_id: u64,
    question: &'a str,
}

#[derive(Serialize)]
struct QuestionsDoc<'a> {
    questions: Vec<QuestionOut<'a>>,
}

pub fn vqa_questions_to_string(pairs: &[QAPair]) -> String {
    to_json(&QuestionsDoc {
        questions: pairs
            .iter()
            .map(|p| QuestionOut {
                question_id: p.question_id,
                image_id: p.image_id,
                question: &p.question,
            })
            .collect(),
    })
}

pub fn write_vqa_questions(pairs: &[QAPair], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &vqa_questions_to_string(pairs))
}

// ---------------------------------------------------------------------------
// VQA annotations

/// Parses `{"annotations": [{question_id, image_id, multiple_choice_answer, answers: [{answer}, ×10]}]}`.
pub fn parse_vqa_annotations(text: &str) -> Result<Vec<Annotation>> {
    let root = parse_json(text)?;
    let mut seen = HashSet::new();
    top_array(&root, "annotations")?
        .iter()
        .map(|v| {
            let obj = as_object(v, "annotation record")?;
            let question_id = u64_field(obj, "question_id")?;
            check_unique(&mut seen, question_id)?;
            let answers = field(obj, "answers")?
                .as_array()
                .ok_or_else(|| Error::structure("`answers` must be an array"))?;
            if answers.len() != 10 {
                return Err(Error::AnswerCountNot10 {
                    question_id,
                    count: answers.len(),
                });
            }
            let human_answers = answers
                .iter()
                .map(|a| Ok(str_field(as_object(a, "answer entry")?, "answer")?.to_owned()))
                .collect::<Result<Vec<_>>>()?;
            Ok(Annotation {
                question_id,
                image_id: u64_field(obj, "image_id")?,
                canonical: str_field(obj, "multiple_choice_answer")?.to_owned(),
                human_answers,
            })
        })
        .collect()
}

/// Reads annotations keyed by question id.
pub fn read_vqa_annotations(path: impl AsRef<Path>) -> Result<BTreeMap<u64, Annotation>> {
    Ok(parse_vqa_annotations(&read_text(path.as_ref())?)?
        .into_iter()
        .map(|a| (a.question_id, a))
        .collect())
}

#[derive(Serialize)]
struct AnswerOut<'a> {
    answer: &'a str,
    answer_id: usize,
}

#[derive(Serialize)]
struct AnnotationOut<'a> {
    question_id: u64,
    image_id: u64,
    multiple_choice_answer: &'a str,
    answers: Vec<AnswerOut<'a>>,
}

#[derive(Serialize)]
struct AnnotationsDoc<'a> {
    annotations: Vec<AnnotationOut<'a>>,
}

pub fn vqa_annotations_to_string<'a>(annotations: impl IntoIterator<Item = &'a Annotation>) -> String {
    to_json(&AnnotationsDoc {
        annotations: annotations
            .into_iter()
            .map(|a| AnnotationOut {
                question_id: a.question_id,
                image_id: a.image_id,
                multiple_choice_answer: &a.canonical,
                answers: a
                    .human_answers
                    .iter()
                    .enumerate()
                    .map(|(i, answer)| AnswerOut {
                        answer,
                        answer_id: i + 1,
                    })
                    .collect(),
            })
            .collect(),
    })
}

pub fn write_vqa_annotations<'a>(
    annotations: impl IntoIterator<Item = &'a Annotation>,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_text(path.as_ref(), &vqa_annotations_to_string(annotations))
}

/// Copies canonical and human answers into the matching questions.
pub fn merge_annotations(pairs: &mut [QAPair], annotations: &BTreeMap<u64, Annotation>) -> Result<()> {
    let index: HashMap<u64, usize> = pairs.iter().enumerate().map(|(i, p)| (p.question_id, i)).collect();
    for (id, ann) in annotations {
        let i = *index.get(id).ok_or(Error::DanglingAnnotation(*id))?;
        pairs[i].answer = Some(ann.canonical.clone());
        pairs[i].human_answers = Some(ann.human_answers.clone());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Prediction results

/// Parses the VQA results format: `[{question_id, answer}, ...]`, each record
/// optionally carrying a `scores` object over the answer vocabulary.
pub fn parse_predictions(text: &str) -> Result<PredictionSet> {
    let root = parse_json(text)?;
    let records = root
        .as_array()
        .ok_or_else(|| Error::structure("prediction file must be a JSON array"))?;
    let mut set = PredictionSet::default();
    for v in records {
        let obj = as_object(v, "prediction record")?;
        let id = u64_field(obj, "question_id")?;
        let answer = str_field(obj, "answer")?.to_owned();
        let scores = match obj.get("scores") {
            None | Some(Value::Null) => None,
            Some(s) => {
                let s = as_object(s, "`scores`")?;
                let entries = s
                    .iter()
                    .map(|(k, v)| {
                        v.as_f64()
                            .map(|x| (k.clone(), x))
                            .ok_or_else(|| Error::structure("scores must be numbers"))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(AnswerScores::new(entries)?)
            }
        };
        set.insert(id, answer, scores)?;
    }
    Ok(set)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    parse_predictions(&read_text(path.as_ref())?)
}

#[derive(Serialize)]
struct PredictionOut<'a> {
    question_id: u64,
    answer: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    scores: Option<&'a BTreeMap<String, f64>>,
}

pub fn predictions_to_string(set: &PredictionSet) -> String {
    let out: Vec<PredictionOut> = set
        .answers()
        .iter()
        .map(|(id, answer)| PredictionOut {
            question_id: *id,
            answer,
            scores: set.scores(*id).map(AnswerScores::as_map),
        })
        .collect();
    to_json(&out)
}

pub fn write_predictions(set: &PredictionSet, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &predictions_to_string(set))
}

// ---------------------------------------------------------------------------
// Implication datasets

fn implication_from_object(obj: &Map<String, Value>) -> Result<ImplicationRecord> {
    let rec = ImplicationRecord {
        implication_id: u64_field(obj, "implication_id")?,
        source_question_id: u64_field(obj, "source_question_id")?,
        image_id: u64_field(obj, "image_id")?,
        itype: str_field(obj, "itype")?.parse()?,
        question: str_field(obj, "question")?.to_owned(),
        answer: str_field(obj, "answer")?.parse()?,
    };
    if rec.answer != rec.itype.implied_answer() {
        return Err(Error::InconsistentImplication(rec.implication_id));
    }
    Ok(rec)
}

/// Parses `{"implications": [...]}`.
pub fn parse_implications(text: &str) -> Result<Vec<ImplicationRecord>> {
    let root = parse_json(text)?;
    let mut seen = HashSet::new();
    top_array(&root, "implications")?
        .iter()
        .map(|v| {
            let rec = implication_from_object(as_object(v, "implication record")?)?;
            check_unique(&mut seen, rec.implication_id)?;
            Ok(rec)
        })
        .collect()
}

pub fn read_implications(path: impl AsRef<Path>) -> Result<Vec<ImplicationRecord>> {
    parse_implications(&read_text(path.as_ref())?)
}

#[derive(Serialize)]
struct ImplicationsDoc<'a> {
    implications: &'a [ImplicationRecord],
}

pub fn implications_to_string(records: &[ImplicationRecord]) -> String {
    to_json(&ImplicationsDoc { implications: records })
}

pub fn write_implications(records: &[ImplicationRecord], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &implications_to_string(records))
}

// ---------------------------------------------------------------------------
// Rephrasings

/// Parses either the grouped layout
/// `{"groups": [{"original_question_id", "rephrasings": [question, ...]}]}`
/// or a flat VQA question list whose records carry `rephrasing_of`.
/// Original ids are not resolved here; evaluation reports dangling ones.
pub fn parse_rephrasings(text: &str) -> Result<Rephrasings> {
    let root = parse_json(text)?;
    let doc = as_object(&root, "document")?;
    let mut seen = HashSet::new();
    let mut out = Rephrasings::default();

    if doc.contains_key("groups") {
        let mut originals = HashSet::new();
        for g in top_array(&root, "groups")? {
            let g = as_object(g, "rephrasing group")?;
            let original = u64_field(g, "original_question_id")?;
            if !originals.insert(original) {
                return Err(Error::DuplicateId(original));
            }
            let items = field(g, "rephrasings")?
                .as_array()
                .ok_or_else(|| Error::structure("`rephrasings` must be an array"))?;
            if items.is_empty() {
                return Err(Error::MalformedJson(JsonDefect::EmptyGroup(original)));
            }
            let mut ids = Vec::with_capacity(items.len());
            for item in items {
                let q = question_from_object(as_object(item, "rephrasing")?)?;
                check_unique(&mut seen, q.question_id)?;
                ids.push(q.question_id);
                out.questions.push(q);
            }
            out.groups.push(RephrasingGroup {
                original_question_id: original,
                rephrasing_ids: ids,
            });
        }
        return Ok(out);
    }

    let mut position: HashMap<u64, usize> = HashMap::new();
    for v in top_array(&root, "questions")? {
        let obj = as_object(v, "question record")?;
        let q = question_from_object(obj)?;
        let original = u64_field(obj, "rephrasing_of")?;
        check_unique(&mut seen, q.question_id)?;
        let slot = *position.entry(original).or_insert_with(|| {
            out.groups.push(RephrasingGroup {
                original_question_id: original,
                rephrasing_ids: Vec::new(),
            });
            out.groups.len() - 1
        });
        out.groups[slot].rephrasing_ids.push(q.question_id);
        out.questions.push(q);
    }
    Ok(out)
}

pub fn read_rephrasings(path: impl AsRef<Path>) -> Result<Rephrasings> {
    parse_rephrasings(&read_text(path.as_ref())?)
}

#[derive(Serialize)]
struct GroupOut<'a> {
    original_question_id: u64,
    rephrasings: Vec<QuestionOut<'a>>,
}

#[derive(Serialize)]
struct GroupsDoc<'a> {
    groups: Vec<GroupOut<'a>>,
}

/// Serializes in the grouped layout. Every rephrasing id must have a question.
pub fn rephrasings_to_string(r: &Rephrasings) -> Result<String> {
    let by_id: HashMap<u64, &QAPair> = r.questions.iter().map(|q| (q.question_id, q)).collect();
    let groups = r
        .groups
        .iter()
        .map(|g| {
            let rephrasings = g
                .rephrasing_ids
                .iter()
                .map(|id| {
                    let q = by_id.get(id).ok_or(Error::DanglingRephrasing(g.original_question_id))?;
                    Ok(QuestionOut {
                        question_id: q.question_id,
                        image_id: q.image_id,
                        question: &q.question,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GroupOut {
                original_question_id: g.original_question_id,
                rephrasings,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(to_json(&GroupsDoc { groups }))
}

pub fn write_rephrasings(r: &Rephrasings, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &rephrasings_to_string(r)?)
}

// ---------------------------------------------------------------------------
// Attention maps (line-delimited JSON)

fn looks_non_finite(line: &str) -> bool {
    line.contains("NaN") || line.contains("Infinity")
}

/// Parses one `{"question_id", "weights": [...]}` object per non-blank line.
pub fn parse_attention_maps(text: &str) -> Result<Vec<AttentionMap>> {
    let mut maps = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                let msg = e.to_string();
                if looks_non_finite(line) || msg.contains("out of range") {
                    return Err(Error::NonFiniteWeight { line: line_no });
                }
                return Err(Error::MalformedJson(JsonDefect::Syntax(format!(
                    "line {line_no}: {msg}"
                ))));
            }
        };
        let obj = as_object(&v, "attention record")?;
        let question_id = u64_field(obj, "question_id")?;
        let weights = field(obj, "weights")?
            .as_array()
            .ok_or_else(|| Error::structure("`weights` must be an array"))?
            .iter()
            .map(|w| {
                let x = w
                    .as_f64()
                    .ok_or_else(|| Error::structure(format!("line {line_no}: weights must be numbers")))?;
                if !x.is_finite() {
                    Err(Error::NonFiniteWeight { line: line_no })
                } else if x < 0.0 {
                    Err(Error::NegativeWeight { line: line_no })
                } else {
                    Ok(x)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        maps.push(AttentionMap { question_id, weights });
    }
    Ok(maps)
}

pub fn read_attention_maps(path: impl AsRef<Path>) -> Result<Vec<AttentionMap>> {
    parse_attention_maps(&read_text(path.as_ref())?)
}

#[derive(Serialize)]
struct AttentionOut<'a> {
    question_id: u64,
    weights: &'a [f64],
}

pub fn attention_maps_to_string(maps: &[AttentionMap]) -> String {
    let mut out = String::new();
    for m in maps {
        out.push_str(&to_json(&AttentionOut {
            question_id: m.question_id,
            weights: &m.weights,
        }));
        out.push('\n');
    }
    out
}

pub fn write_attention_maps(maps: &[AttentionMap], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &attention_maps_to_string(maps))
}

/// Serializes any report value as compact JSON.
pub fn report_to_string<T: Serialize>(report: &T) -> String {
    to_json(report)
}

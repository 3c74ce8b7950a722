//! Accuracy, consistency, robustness and attention-map distance over
//! prediction sets.
//!
//! Every evaluator maps records in parallel and reduces sequentially in
//! input order, so results do not depend on the thread count.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generate::{ImplicationType, ImpliedAnswer};
use crate::io::{Annotation, ImplicationRecord, QAPair, RephrasingGroup};
use crate::text::answer_key;

/// Confidence scores over an answer vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerScores {
    scores: BTreeMap<String, f64>,
}

impl AnswerScores {
    pub fn new<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut scores = BTreeMap::new();
        for (k, v) in entries {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("answer score {v} outside [0, 1]")));
            }
            scores.insert(k.into(), v);
        }
        if scores.is_empty() {
            return Err(Error::InvalidInput("answer vocabulary is empty".into()));
        }
        Ok(AnswerScores { scores })
    }

    pub fn as_map(&self) -> &BTreeMap<String, f64> {
        &self.scores
    }

    pub fn get(&self, answer: &str) -> Option<f64> {
        self.scores.get(answer).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Highest-scoring entry; ties go to the lexicographically first answer.
    pub fn top(&self) -> (&str, f64) {
        let mut best: Option<(&str, f64)> = None;
        for (k, v) in &self.scores {
            if best.is_none_or(|(_, b)| *v > b) {
                best = Some((k, *v));
            }
        }
        best.expect("non-empty vocabulary")
    }
}

/// Model answers keyed by question id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    answers: BTreeMap<u64, String>,
    scores: BTreeMap<u64, AnswerScores>,
}

impl PredictionSet {
    pub fn insert(&mut self, question_id: u64, answer: String, scores: Option<AnswerScores>) -> Result<()> {
        if self.answers.contains_key(&question_id) {
            return Err(Error::DuplicateId(question_id));
        }
        self.answers.insert(question_id, answer);
        if let Some(s) = scores {
            self.scores.insert(question_id, s);
        }
        Ok(())
    }

    pub fn from_answers<I, S>(answers: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, S)>,
        S: Into<String>,
    {
        let mut set = PredictionSet::default();
        for (id, a) in answers {
            set.insert(id, a.into(), None)?;
        }
        Ok(set)
    }

    pub fn answer(&self, question_id: u64) -> Option<&str> {
        self.answers.get(&question_id).map(String::as_str)
    }

    pub fn scores(&self, question_id: u64) -> Option<&AnswerScores> {
        self.scores.get(&question_id)
    }

    pub fn answers(&self) -> &BTreeMap<u64, String> {
        &self.answers
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GtEntry {
    pub answer: String,
    /// Exactly ten answers when present.
    pub human_answers: Option<Vec<String>>,
    pub image_id: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    entries: BTreeMap<u64, GtEntry>,
}

impl GroundTruth {
    pub fn insert(&mut self, question_id: u64, entry: GtEntry) -> Result<()> {
        if let Some(h) = &entry.human_answers {
            if h.len() != 10 {
                return Err(Error::AnswerCountNot10 {
                    question_id,
                    count: h.len(),
                });
            }
        }
        if self.entries.insert(question_id, entry).is_some() {
            return Err(Error::DuplicateId(question_id));
        }
        Ok(())
    }

    pub fn from_annotations<'a>(annotations: impl IntoIterator<Item = &'a Annotation>) -> Result<Self> {
        let mut gt = GroundTruth::default();
        for a in annotations {
            gt.insert(
                a.question_id,
                GtEntry {
                    answer: a.canonical.clone(),
                    human_answers: Some(a.human_answers.clone()),
                    image_id: a.image_id,
                },
            )?;
        }
        Ok(gt)
    }

    /// Ground truth from answered QA pairs; unanswered pairs are skipped.
    pub fn from_pairs(pairs: &[QAPair]) -> Result<Self> {
        let mut gt = GroundTruth::default();
        for p in pairs {
            if let Some(answer) = &p.answer {
                gt.insert(
                    p.question_id,
                    GtEntry {
                        answer: answer.clone(),
                        human_answers: p.human_answers.clone(),
                        image_id: p.image_id,
                    },
                )?;
            }
        }
        Ok(gt)
    }

    pub fn get(&self, question_id: u64) -> Option<&GtEntry> {
        self.entries.get(&question_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Whether a prediction matches the canonical answer after normalization.
pub fn is_correct(prediction: &str, gt: &GtEntry) -> bool {
    answer_key(prediction) == answer_key(&gt.answer)
}

/// Accuracy of one answer: the ten-annotator leave-one-out average of
/// `min(matches / 3, 1)` when human answers exist, exact match otherwise.
pub fn question_accuracy(prediction: &str, gt: &GtEntry) -> f64 {
    let key = answer_key(prediction);
    match &gt.human_answers {
        Some(humans) => {
            let matches: Vec<bool> = humans.iter().map(|h| answer_key(h) == key).collect();
            let total = matches.iter().filter(|m| **m).count();
            let sum: f64 = matches
                .iter()
                .map(|m| {
                    let others = total - usize::from(*m);
                    (others as f64 / 3.0).min(1.0)
                })
                .sum();
            sum / matches.len() as f64
        }
        None => {
            if key == answer_key(&gt.answer) {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn ordered_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Mean accuracy over all predicted questions; `None` for an empty set.
pub fn vqa_accuracy(pred: &PredictionSet, gt: &GroundTruth) -> Result<Option<f64>> {
    let items: Vec<(&u64, &String)> = pred.answers.iter().collect();
    let values: Vec<f64> = items
        .par_iter()
        .map(|(id, answer)| {
            let entry = gt.get(**id).ok_or(Error::MissingGroundTruth(**id))?;
            Ok(question_accuracy(answer, entry))
        })
        .collect::<Result<_>>()?;
    Ok(ordered_mean(&values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
    /// `correct / total`; absent when nothing was counted.
    pub rate: Option<f64>,
}

impl Tally {
    fn new(correct: usize, total: usize) -> Self {
        Tally {
            correct,
            total,
            rate: (total > 0).then(|| correct as f64 / total as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    #[serde(flatten)]
    pub per_type: BTreeMap<ImplicationType, Tally>,
    pub overall: Tally,
    /// Distinct source questions answered correctly.
    pub originals_correct: usize,
    /// Distinct source questions referenced by the implications.
    pub originals_total: usize,
}

/// Share of implications answered correctly among those whose source
/// question was answered correctly.
pub fn consistency(
    orig_pred: &PredictionSet,
    imp_pred: &PredictionSet,
    orig_gt: &GroundTruth,
    implications: &[ImplicationRecord],
) -> Result<ConsistencyReport> {
    // (type, source id, source correct, implication correct)
    let judged: Vec<(ImplicationType, u64, bool, bool)> = implications
        .par_iter()
        .map(|rec| {
            let src = rec.source_question_id;
            let dangling = Error::DanglingImplication(rec.implication_id);
            let (Some(orig), Some(gt)) = (orig_pred.answer(src), orig_gt.get(src)) else {
                return Err(dangling);
            };
            if !is_correct(orig, gt) {
                return Ok((rec.itype, src, false, false));
            }
            let answer = imp_pred.answer(rec.implication_id).ok_or(dangling)?;
            Ok((rec.itype, src, true, answer_key(answer) == rec.answer.as_str()))
        })
        .collect::<Result<_>>()?;

    let mut counts: BTreeMap<ImplicationType, (usize, usize)> =
        ImplicationType::ALL.iter().map(|t| (*t, (0, 0))).collect();
    let mut sources: HashSet<u64> = HashSet::new();
    let mut correct_sources: HashSet<u64> = HashSet::new();
    for (itype, src, src_ok, imp_ok) in &judged {
        sources.insert(*src);
        if !src_ok {
            continue;
        }
        correct_sources.insert(*src);
        let entry = counts.entry(*itype).or_insert((0, 0));
        entry.1 += 1;
        if *imp_ok {
            entry.0 += 1;
        }
    }
    let (correct, total) = counts.values().fold((0, 0), |(c, t), (ci, ti)| (c + ci, t + ti));
    Ok(ConsistencyReport {
        per_type: counts.into_iter().map(|(k, (c, t))| (k, Tally::new(c, t))).collect(),
        overall: Tally::new(correct, total),
        originals_correct: correct_sources.len(),
        originals_total: sources.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    /// Mean accuracy over rephrasings of correctly answered originals.
    pub robustness: Option<f64>,
    pub originals_correct: usize,
    pub originals_total: usize,
    pub rephrasings_scored: usize,
}

/// Accuracy on rephrasings, counted only for correctly answered originals.
/// A rephrasing is scored against its original's ground truth.
pub fn robustness_report(
    orig_pred: &PredictionSet,
    reph_pred: &PredictionSet,
    gt: &GroundTruth,
    groups: &[RephrasingGroup],
) -> Result<RobustnessReport> {
    let per_group: Vec<Option<Vec<f64>>> = groups
        .par_iter()
        .map(|g| {
            let orig = g.original_question_id;
            let (Some(answer), Some(entry)) = (orig_pred.answer(orig), gt.get(orig)) else {
                return Err(Error::DanglingRephrasing(orig));
            };
            if !is_correct(answer, entry) {
                return Ok(None);
            }
            g.rephrasing_ids
                .iter()
                .map(|id| {
                    let a = reph_pred.answer(*id).ok_or(Error::MissingPrediction(*id))?;
                    Ok(question_accuracy(a, entry))
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some)
        })
        .collect::<Result<_>>()?;

    let originals_correct = per_group.iter().filter(|g| g.is_some()).count();
    let values: Vec<f64> = per_group.into_iter().flatten().flatten().collect();
    Ok(RobustnessReport {
        robustness: ordered_mean(&values),
        originals_correct,
        originals_total: groups.len(),
        rephrasings_scored: values.len(),
    })
}

pub fn robustness(
    orig_pred: &PredictionSet,
    reph_pred: &PredictionSet,
    gt: &GroundTruth,
    groups: &[RephrasingGroup],
) -> Result<Option<f64>> {
    robustness_report(orig_pred, reph_pred, gt, groups).map(|r| r.robustness)
}

/// Attention weights over image regions for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub question_id: u64,
    pub weights: Vec<f64>,
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

fn index_maps(maps: &[AttentionMap]) -> Result<HashMap<u64, &AttentionMap>> {
    let mut index = HashMap::with_capacity(maps.len());
    for m in maps {
        if index.insert(m.question_id, m).is_some() {
            return Err(Error::DuplicateId(m.question_id));
        }
    }
    Ok(index)
}

/// Mean Euclidean distance between paired attention maps.
pub fn attention_distance(maps_a: &[AttentionMap], maps_b: &[AttentionMap], pairing: &[(u64, u64)]) -> Result<f64> {
    if pairing.is_empty() {
        return Err(Error::InvalidInput("attention pairing is empty".into()));
    }
    let a = index_maps(maps_a)?;
    let b = index_maps(maps_b)?;
    let distances: Vec<f64> = pairing
        .par_iter()
        .map(|(ia, ib)| {
            let ma = a.get(ia).ok_or(Error::MissingAttentionMap(*ia))?;
            let mb = b.get(ib).ok_or(Error::MissingAttentionMap(*ib))?;
            euclidean_distance(&ma.weights, &mb.weights)
        })
        .collect::<Result<_>>()?;
    Ok(distances.iter().sum::<f64>() / distances.len() as f64)
}

/// Answers every implication with an independent fair coin flip.
pub fn uniform_yes_no_answers(implications: &[ImplicationRecord], seed: u64) -> PredictionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = PredictionSet::default();
    for rec in implications {
        let answer = if rng.gen_bool(0.5) {
            ImpliedAnswer::Yes
        } else {
            ImpliedAnswer::No
        };
        // duplicate implication ids keep their first answer
        let _ = set.insert(rec.implication_id, answer.as_str().to_owned(), None);
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(answer: &str, humans: Option<Vec<&str>>) -> GtEntry {
        GtEntry {
            answer: answer.into(),
            human_answers: humans.map(|h| h.into_iter().map(String::from).collect()),
            image_id: 0,
        }
    }

    #[test]
    fn ten_annotator_accuracy() {
        let all = entry("2", Some(vec!["2"; 10]));
        assert_eq!(question_accuracy("2", &all), 1.0);
        let mut one = vec!["3"; 10];
        one[4] = "2";
        let one = entry("3", Some(one));
        assert!((question_accuracy("2", &one) - 0.3).abs() < 1e-12);
        assert_eq!(question_accuracy("7", &one), 0.0);
        let mut three = vec!["3"; 10];
        three[0] = "2";
        three[1] = "2";
        three[2] = "2";
        // 3 subsets see 2 matches, 7 see 3 matches: (3·2/3 + 7·1)/10
        assert!((question_accuracy("2", &entry("3", Some(three))) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn canonical_accuracy_uses_normalization() {
        let e = entry("Two", None);
        assert_eq!(question_accuracy("two.", &e), 1.0);
        assert_eq!(question_accuracy("three", &e), 0.0);
    }

    #[test]
    fn accuracy_requires_ground_truth() {
        let pred = PredictionSet::from_answers([(1, "a"), (2, "b")]).unwrap();
        let mut gt = GroundTruth::default();
        gt.insert(1, entry("a", None)).unwrap();
        assert!(matches!(vqa_accuracy(&pred, &gt), Err(Error::MissingGroundTruth(2))));
        assert_eq!(vqa_accuracy(&PredictionSet::default(), &gt).unwrap(), None);
    }

    #[test]
    fn ground_truth_validates_human_answers() {
        let mut gt = GroundTruth::default();
        assert!(matches!(
            gt.insert(1, entry("a", Some(vec!["a"; 9]))),
            Err(Error::AnswerCountNot10 {
                question_id: 1,
                count: 9
            })
        ));
    }

    #[test]
    fn attention_examples() {
        let m = |id, w: &[f64]| AttentionMap {
            question_id: id,
            weights: w.to_vec(),
        };
        let a = vec![m(1, &[1.0, 0.0]), m(2, &[0.5, 0.5])];
        let b = vec![m(1, &[0.0, 1.0]), m(2, &[0.5, 0.5])];
        assert_eq!(attention_distance(&a, &a, &[(1, 1)]).unwrap(), 0.0);
        let d = attention_distance(&a, &b, &[(1, 1)]).unwrap();
        assert!((d - std::f64::consts::SQRT_2).abs() < 1e-12);
        let d = attention_distance(&a, &b, &[(1, 1), (2, 2)]).unwrap();
        assert!((d - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let short = vec![m(1, &[1.0])];
        assert!(matches!(
            attention_distance(&a, &short, &[(1, 1)]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            attention_distance(&a, &b, &[(3, 1)]),
            Err(Error::MissingAttentionMap(3))
        ));
    }

    #[test]
    fn answer_scores_top_and_validation() {
        let s = AnswerScores::new([("no", 0.2), ("yes", 0.7), ("2", 0.7)]).unwrap();
        assert_eq!(s.top(), ("2", 0.7));
        assert!(AnswerScores::new(Vec::<(String, f64)>::new()).is_err());
        assert!(AnswerScores::new([("a", f64::NAN)]).is_err());
        assert!(AnswerScores::new([("a", 1.5)]).is_err());
    }
}

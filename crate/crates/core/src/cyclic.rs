//! Cyclic training contract: the three loss terms, their weighted total,
//! the similarity gate, late activation and a single cyclic step run
//! against a pluggable [`Answerer`].
//!
//! [`ToyAnswerer`] is a small differentiable linear scorer used to check
//! that the assembled loss has the gradient it should.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generate::{generate, ImplicationType, ImpliedAnswer};
use crate::io::QAPair;
use crate::metrics::vqa::AnswerScores;
use crate::question::classify;
use crate::text::{answer_key, cosine_similarity, normalize, BowVector, TokenSeq};

/// Predictions are clamped to `[BCE_EPSILON, 1 - BCE_EPSILON]` before taking logs.
pub const BCE_EPSILON: f64 = 1e-7;
/// Floor applied to token probabilities in the sequence loss.
pub const NLL_EPSILON: f64 = 1e-7;
const PAD_TOKEN: &str = "<pad>";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossWeights {
    pub lambda_q: f64,
    pub lambda_imp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_q: 0.5,
            lambda_imp: 1.5,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_q: f64, lambda_imp: f64) -> Result<Self> {
        for (name, v) in [("lambda_q", lambda_q), ("lambda_imp", lambda_imp)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(LossWeights { lambda_q, lambda_imp })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CyclicConfig {
    pub t_sim: f64,
    pub a_iter: u64,
    pub weights: LossWeights,
}

impl Default for CyclicConfig {
    fn default() -> Self {
        CyclicConfig {
            t_sim: 0.9,
            a_iter: 5500,
            weights: LossWeights::default(),
        }
    }
}

impl CyclicConfig {
    pub fn new(t_sim: f64, a_iter: u64, weights: LossWeights) -> Result<Self> {
        if !(0.0..=1.0).contains(&t_sim) {
            return Err(Error::Config(format!("t_sim must lie in [0, 1], got {t_sim}")));
        }
        Ok(CyclicConfig { t_sim, a_iter, weights })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageRef {
    pub image_id: u64,
}

/// Anything that scores the answer vocabulary for a question about an image.
pub trait Answerer {
    fn answer(&self, question: &TokenSeq, image: ImageRef) -> AnswerScores;
}

/// Mean binary cross-entropy over the vocabulary.
pub fn bce_loss(pred: &AnswerScores, target: &AnswerScores) -> Result<f64> {
    let (p, t) = (pred.as_map(), target.as_map());
    if p.len() != t.len() || p.keys().zip(t.keys()).any(|(a, b)| a != b) {
        return Err(Error::VocabMismatch);
    }
    let sum: f64 = p
        .values()
        .zip(t.values())
        .map(|(p, t)| {
            let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / p.len() as f64)
}

/// A probability distribution over output tokens at one sequence position.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: BTreeMap<String, f64>,
}

impl TokenDistribution {
    pub fn new<I, S>(probs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let probs: BTreeMap<String, f64> = probs.into_iter().map(|(k, v)| (k.into(), v)).collect();
        if probs.values().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(
                "probabilities must be finite and ≥ 0".into(),
            ));
        }
        let total: f64 = probs.values().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        Ok(TokenDistribution { probs })
    }

    /// All mass on `token`, zero on the rest of `vocab`.
    pub fn one_hot<'a>(token: &str, vocab: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut probs: BTreeMap<String, f64> = vocab.into_iter().map(|t| (t.to_owned(), 0.0)).collect();
        probs.insert(token.to_owned(), 1.0);
        Ok(TokenDistribution { probs })
    }

    pub fn prob(&self, token: &str) -> Option<f64> {
        self.probs.get(token).copied()
    }
}

/// Mean over positions of `-ln p(target token)`.
pub fn nll_loss(token_distributions: &[TokenDistribution], target_tokens: &TokenSeq) -> Result<f64> {
    if token_distributions.len() != target_tokens.len() {
        return Err(Error::LengthMismatch {
            expected: target_tokens.len(),
            found: token_distributions.len(),
        });
    }
    let mut sum = 0.0;
    for (dist, tok) in token_distributions.iter().zip(target_tokens.tokens()) {
        let p = dist.prob(tok).ok_or_else(|| Error::TokenOutOfVocab(tok.clone()))?;
        sum += -p.max(NLL_EPSILON).ln();
    }
    Ok(sum / target_tokens.len() as f64)
}

/// `L_vqa + λ_Q·L_Q + λ_imp·L_imp`; the implication term is dropped while
/// the gate is closed and both cyclic terms are dropped before activation.
pub fn total_loss(l_vqa: f64, l_q: f64, l_imp: f64, w: &LossWeights, gate_open: bool, cycle_active: bool) -> f64 {
    if !cycle_active {
        return l_vqa;
    }
    let imp = if gate_open { w.lambda_imp * l_imp } else { 0.0 };
    l_vqa + w.lambda_q * l_q + imp
}

/// Similarity used by the gate between a generated and a reference question.
pub trait QuestionEmbedding {
    fn similarity(&self, a: &TokenSeq, b: &TokenSeq) -> Result<f64>;
}

/// Cosine similarity of bag-of-words count vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct BowEmbedding;

impl QuestionEmbedding for BowEmbedding {
    fn similarity(&self, a: &TokenSeq, b: &TokenSeq) -> Result<f64> {
        cosine_similarity(&BowVector::from(a), &BowVector::from(b))
    }
}

pub fn gate_with(
    embedding: &dyn QuestionEmbedding,
    generated: &TokenSeq,
    ground_truth_imp: &TokenSeq,
    t_sim: f64,
) -> Result<bool> {
    Ok(embedding.similarity(generated, ground_truth_imp)? >= t_sim)
}

/// Passes iff the bag-of-words cosine similarity is at least `t_sim`.
pub fn gate(generated: &TokenSeq, ground_truth_imp: &TokenSeq, t_sim: f64) -> Result<bool> {
    gate_with(&BowEmbedding, generated, ground_truth_imp, t_sim)
}

/// Cyclic terms are active from iteration `a_iter` on.
pub fn late_activation(iteration: u64, a_iter: u64) -> bool {
    iteration >= a_iter
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CyclicStepTrace {
    pub iteration: u64,
    pub question_id: u64,
    pub knob: ImplicationType,
    pub predicted_answer: String,
    pub generated_implication: Option<String>,
    pub target_implication: Option<String>,
    pub implied_answer: Option<ImpliedAnswer>,
    pub implication_answer: Option<String>,
    pub implication_correct: Option<bool>,
    pub similarity: Option<f64>,
    pub l_vqa: f64,
    pub l_q: f64,
    pub l_imp: f64,
    pub l_total: f64,
    pub gate_open: bool,
    pub cycle_active: bool,
    pub inactive_reason: Option<String>,
}

/// The discrete decisions of one step. With these fixed, the total loss is a
/// smooth function of the answerer's parameters.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub question: TokenSeq,
    pub image: ImageRef,
    pub vqa_target: AnswerScores,
    /// Implication fed back to the answerer and its target, when the gate is open.
    pub implication: Option<(TokenSeq, AnswerScores)>,
    pub l_q: f64,
    pub gate_open: bool,
    pub cycle_active: bool,
}

/// Soft VQA target over `vocab`: `min(#humans agreeing / 3, 1)` with human
/// answers, one-hot on the canonical answer otherwise.
pub fn vqa_target(qa: &QAPair, vocab: &AnswerScores) -> Result<AnswerScores> {
    let canonical = qa
        .answer
        .as_deref()
        .ok_or_else(|| Error::InvalidInput(format!("question {} has no answer", qa.question_id)))?;
    let humans: Option<Vec<String>> = qa
        .human_answers
        .as_ref()
        .map(|h| h.iter().map(|a| answer_key(a)).collect());
    let canonical = answer_key(canonical);
    AnswerScores::new(vocab.as_map().keys().map(|v| {
        let key = answer_key(v);
        let score = match &humans {
            Some(h) => (h.iter().filter(|a| **a == key).count() as f64 / 3.0).min(1.0),
            None => f64::from(u8::from(key == canonical)),
        };
        (v.clone(), score)
    }))
}

fn yes_no_target(answer: ImpliedAnswer, vocab: &AnswerScores) -> Result<AnswerScores> {
    AnswerScores::new(
        vocab
            .as_map()
            .keys()
            .map(|v| (v.clone(), f64::from(u8::from(answer_key(v) == answer.as_str())))),
    )
}

/// One-hot distributions of `generated` laid over the positions of `target`;
/// missing positions hold a padding token.
fn sequence_loss(generated: Option<&TokenSeq>, target: &TokenSeq) -> Result<f64> {
    let mut vocab: BTreeSet<&str> = target.tokens().iter().map(String::as_str).collect();
    vocab.insert(PAD_TOKEN);
    if let Some(g) = generated {
        vocab.extend(g.tokens().iter().map(String::as_str));
    }
    let dists = (0..target.len())
        .map(|i| {
            let tok = generated
                .and_then(|g| g.tokens().get(i))
                .map_or(PAD_TOKEN, String::as_str);
            TokenDistribution::one_hot(tok, vocab.iter().copied())
        })
        .collect::<Result<Vec<_>>>()?;
    nll_loss(&dists, target)
}

/// Runs one cyclic step: answer `Q`, generate `Q_imp` from the top answer
/// with the rule-based generator, gate it against the implication generated
/// from the ground-truth answer, answer `Q_imp`, and combine the losses.
pub fn cyclic_step(
    answerer: &dyn Answerer,
    qa: &QAPair,
    knob: ImplicationType,
    cfg: &CyclicConfig,
    iteration: u64,
) -> Result<CyclicStepTrace> {
    plan_step(answerer, qa, knob, cfg, iteration).map(|(_, trace)| trace)
}

/// Like [`cyclic_step`], also returning the step's fixed decisions.
pub fn plan_step(
    answerer: &dyn Answerer,
    qa: &QAPair,
    knob: ImplicationType,
    cfg: &CyclicConfig,
    iteration: u64,
) -> Result<(StepPlan, CyclicStepTrace)> {
    let question = normalize(&qa.question)?;
    let parsed = classify(&question)?;
    let image = ImageRef { image_id: qa.image_id };
    let gt_answer = qa
        .answer
        .as_deref()
        .ok_or_else(|| Error::InvalidInput(format!("question {} has no answer", qa.question_id)))?;

    let scores = answerer.answer(&question, image);
    let target = vqa_target(qa, &scores)?;
    let l_vqa = bce_loss(&scores, &target)?;
    let predicted = scores.top().0.to_owned();

    let mut trace = CyclicStepTrace {
        iteration,
        question_id: qa.question_id,
        knob,
        predicted_answer: predicted.clone(),
        generated_implication: None,
        target_implication: None,
        implied_answer: None,
        implication_answer: None,
        implication_correct: None,
        similarity: None,
        l_vqa,
        l_q: 0.0,
        l_imp: 0.0,
        l_total: l_vqa,
        gate_open: false,
        cycle_active: false,
        inactive_reason: None,
    };
    let mut plan = StepPlan {
        question,
        image,
        vqa_target: target,
        implication: None,
        l_q: 0.0,
        gate_open: false,
        cycle_active: false,
    };

    let Some(gt_imp) = generate(qa.question_id, &parsed, gt_answer, knob)? else {
        trace.inactive_reason = Some("no implication rule for this question, answer and type".into());
        return Ok((plan, trace));
    };
    trace.target_implication = Some(gt_imp.surface.clone());
    trace.implied_answer = Some(gt_imp.answer);

    let cycle_active = late_activation(iteration, cfg.a_iter);
    if !cycle_active {
        trace.inactive_reason = Some("before late activation".into());
    }

    let generated = generate(qa.question_id, &parsed, &predicted, knob)?;
    let l_q = sequence_loss(generated.as_ref().map(|g| &g.question), &gt_imp.question)?;
    let similarity = match &generated {
        Some(g) => Some(BowEmbedding.similarity(&g.question, &gt_imp.question)?),
        None => None,
    };
    let gate_open = similarity.is_some_and(|s| s >= cfg.t_sim);

    let mut l_imp = 0.0;
    if let (true, Some(g)) = (gate_open, &generated) {
        let imp_scores = answerer.answer(&g.question, image);
        let imp_target = yes_no_target(gt_imp.answer, &imp_scores)?;
        l_imp = bce_loss(&imp_scores, &imp_target)?;
        let imp_answer = imp_scores.top().0.to_owned();
        trace.implication_correct = Some(answer_key(&imp_answer) == gt_imp.answer.as_str());
        trace.implication_answer = Some(imp_answer);
        plan.implication = Some((g.question.clone(), imp_target));
    }

    trace.generated_implication = generated.map(|g| g.surface);
    trace.similarity = similarity;
    trace.l_q = l_q;
    trace.l_imp = l_imp;
    trace.gate_open = gate_open;
    trace.cycle_active = cycle_active;
    trace.l_total = total_loss(l_vqa, l_q, l_imp, &cfg.weights, gate_open, cycle_active);

    plan.l_q = l_q;
    plan.gate_open = gate_open;
    plan.cycle_active = cycle_active;
    Ok((plan, trace))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Linear scorer over hashed bag-of-words features with a per-answer
/// sigmoid output.
///
/// Parameters are laid out answer by answer: `n_features` weights followed
/// by one bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyAnswerer {
    vocab: Vec<String>,
    n_features: usize,
    params: Vec<f64>,
}

impl ToyAnswerer {
    /// Weights drawn uniformly from `[-scale, scale]`.
    pub fn new(vocab: Vec<String>, n_features: usize, seed: u64, scale: f64) -> Result<Self> {
        let distinct: BTreeSet<&String> = vocab.iter().collect();
        if vocab.is_empty() || distinct.len() != vocab.len() {
            return Err(Error::InvalidInput(
                "toy vocabulary must be non-empty and distinct".into(),
            ));
        }
        if n_features == 0 {
            return Err(Error::InvalidInput("toy answerer needs at least one feature".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..vocab.len() * (n_features + 1))
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        Ok(ToyAnswerer {
            vocab,
            n_features,
            params,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    /// Hashed token counts plus one hashed image indicator.
    pub fn features(&self, question: &TokenSeq, image: ImageRef) -> Vec<f64> {
        let mut x = vec![0.0; self.n_features];
        let d = self.n_features as u64;
        for t in question.tokens() {
            x[(fnv1a(t.as_bytes()) % d) as usize] += 1.0;
        }
        x[(fnv1a(format!("<image:{}>", image.image_id).as_bytes()) % d) as usize] += 1.0;
        x
    }

    fn probabilities(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let stride = self.n_features + 1;
        (0..self.vocab.len())
            .map(|k| {
                let row = &params[k * stride..(k + 1) * stride];
                let z = row[..self.n_features].iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + row[self.n_features];
                sigmoid(z)
            })
            .collect()
    }

    fn scores_with(&self, params: &[f64], question: &TokenSeq, image: ImageRef) -> AnswerScores {
        let p = self.probabilities(params, &self.features(question, image));
        AnswerScores::new(self.vocab.iter().cloned().zip(p)).expect("sigmoid outputs lie in [0, 1]")
    }

    fn plan_loss_with(&self, params: &[f64], plan: &StepPlan, w: &LossWeights) -> Result<f64> {
        let l_vqa = bce_loss(&self.scores_with(params, &plan.question, plan.image), &plan.vqa_target)?;
        let l_imp = match &plan.implication {
            Some((q, target)) => bce_loss(&self.scores_with(params, q, plan.image), target)?,
            None => 0.0,
        };
        Ok(total_loss(l_vqa, plan.l_q, l_imp, w, plan.gate_open, plan.cycle_active))
    }

    /// Mean total loss over `plans` at the given parameters.
    pub fn batch_loss_with(&self, params: &[f64], plans: &[StepPlan], w: &LossWeights) -> Result<f64> {
        let mut sum = 0.0;
        for plan in plans {
            sum += self.plan_loss_with(params, plan, w)?;
        }
        Ok(sum / plans.len() as f64)
    }

    /// Closed-form gradient of the mean BCE term `coef · bce(σ(Wx + b), target)`.
    fn accumulate_bce_grad(&self, grad: &mut [f64], x: &[f64], target: &AnswerScores, coef: f64) {
        let p = self.probabilities(&self.params, x);
        let stride = self.n_features + 1;
        let v = self.vocab.len() as f64;
        // AnswerScores iterate in sorted key order; map back to vocab positions
        for (k, answer) in self.vocab.iter().enumerate() {
            let t = target.get(answer).unwrap_or(0.0);
            let pk = p[k];
            if !(BCE_EPSILON..=1.0 - BCE_EPSILON).contains(&pk) {
                continue;
            }
            let g = coef * (pk - t) / v;
            let row = &mut grad[k * stride..(k + 1) * stride];
            for (r, xj) in row[..self.n_features].iter_mut().zip(x) {
                *r += g * xj;
            }
            row[self.n_features] += g;
        }
    }

    /// Analytic gradient of the mean total loss over `plans`.
    pub fn batch_gradient(&self, plans: &[StepPlan], w: &LossWeights) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / plans.len() as f64;
        for plan in plans {
            let x = self.features(&plan.question, plan.image);
            self.accumulate_bce_grad(&mut grad, &x, &plan.vqa_target, scale);
            if let (true, true, Some((q, target))) = (plan.cycle_active, plan.gate_open, &plan.implication) {
                let xi = self.features(q, plan.image);
                self.accumulate_bce_grad(&mut grad, &xi, target, scale * w.lambda_imp);
            }
        }
        grad
    }

    /// Plain gradient descent step.
    pub fn sgd_step(&mut self, grad: &[f64], learning_rate: f64) {
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= learning_rate * g;
        }
    }
}

impl Answerer for ToyAnswerer {
    fn answer(&self, question: &TokenSeq, image: ImageRef) -> AnswerScores {
        self.scores_with(&self.params, question, image)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub n_params: usize,
    pub gates_open: usize,
    pub cycles_active: usize,
}

/// Finite-difference step used by [`toy_gradient_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Denominator floor for the relative error of near-zero gradient entries.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient of the mean total loss with central
/// finite differences. Example `i` of the batch uses knob
/// `ImplicationType::ALL[i % 3]`; the step's discrete decisions (top answer,
/// generated implication, gate) are taken at the current parameters and
/// held fixed while differencing.
pub fn toy_gradient_check(
    answerer: &ToyAnswerer,
    batch: &[QAPair],
    cfg: &CyclicConfig,
    iteration: u64,
) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let plans = batch
        .iter()
        .enumerate()
        .map(|(i, qa)| plan_step(answerer, qa, ImplicationType::ALL[i % 3], cfg, iteration).map(|(p, _)| p))
        .collect::<Result<Vec<_>>>()?;
    let analytic = answerer.batch_gradient(&plans, &cfg.weights);

    let mut params = answerer.params().to_vec();
    let mut max_rel: f64 = 0.0;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + GRAD_CHECK_STEP;
        let up = answerer.batch_loss_with(&params, &plans, &cfg.weights)?;
        params[i] = orig - GRAD_CHECK_STEP;
        let down = answerer.batch_loss_with(&params, &plans, &cfg.weights)?;
        params[i] = orig;
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(GradCheckReport {
        max_relative_error: max_rel,
        n_params: params.len(),
        gates_open: plans.iter().filter(|p| p.gate_open).count(),
        cycles_active: plans.iter().filter(|p| p.cycle_active).count(),
    })
}

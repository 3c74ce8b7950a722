//! Evaluation metrics: VQA-side scoring and NLG metrics for generated questions.

pub mod nlg;
pub mod stem;
pub mod vqa;

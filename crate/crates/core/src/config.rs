//! Run configuration: defaults, `key = value` config files and flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::cyclic::{CyclicConfig, LossWeights};
use crate::error::{Error, Result};
use crate::generate::ImplicationType;

/// Everything a subcommand may need. Unset paths stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliConfig {
    pub questions: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub implication_predictions: Option<PathBuf>,
    pub rephrasing_predictions: Option<PathBuf>,
    pub implications: Option<PathBuf>,
    pub rephrasings: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub attention_a: Option<PathBuf>,
    pub attention_b: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub types: Vec<ImplicationType>,
    pub t_sim: f64,
    pub a_iter: u64,
    pub lambda_q: f64,
    pub lambda_imp: f64,
    pub steps: u64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Worker threads; 0 means one per available core.
    pub jobs: usize,
    pub pretty: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        let cyclic = CyclicConfig::default();
        CliConfig {
            questions: None,
            annotations: None,
            predictions: None,
            implication_predictions: None,
            rephrasing_predictions: None,
            implications: None,
            rephrasings: None,
            candidates: None,
            references: None,
            attention_a: None,
            attention_b: None,
            out: None,
            types: ImplicationType::ALL.to_vec(),
            t_sim: cyclic.t_sim,
            a_iter: cyclic.a_iter,
            lambda_q: cyclic.weights.lambda_q,
            lambda_imp: cyclic.weights.lambda_imp,
            steps: 100,
            learning_rate: 0.5,
            seed: 0,
            jobs: 0,
            pretty: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for `{key}`"))),
    }
}

impl CliConfig {
    /// Sets one entry. Keys accept `-` or `_` as separators.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let path = || Some(PathBuf::from(value));
        match key.as_str() {
            "questions" => self.questions = path(),
            "annotations" => self.annotations = path(),
            "predictions" => self.predictions = path(),
            "implication_predictions" => self.implication_predictions = path(),
            "rephrasing_predictions" => self.rephrasing_predictions = path(),
            "implications" => self.implications = path(),
            "rephrasings" => self.rephrasings = path(),
            "candidates" => self.candidates = path(),
            "references" => self.references = path(),
            "attention_a" => self.attention_a = path(),
            "attention_b" => self.attention_b = path(),
            "out" => self.out = path(),
            "types" => {
                let types = ImplicationType::parse_list(value)?;
                if types.is_empty() {
                    return Err(Error::Config("`types` selects no implication type".into()));
                }
                self.types = types;
            }
            "t_sim" => self.t_sim = parse_num(&key, value)?,
            "a_iter" => self.a_iter = parse_num(&key, value)?,
            "lambda_q" => self.lambda_q = parse_num(&key, value)?,
            "lambda_imp" => self.lambda_imp = parse_num(&key, value)?,
            "steps" => self.steps = parse_num(&key, value)?,
            "lr" | "learning_rate" => self.learning_rate = parse_num(&key, value)?,
            "seed" => self.seed = parse_num(&key, value)?,
            "jobs" => self.jobs = parse_num(&key, value)?,
            "pretty" => self.pretty = parse_bool(&key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` document; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text)
    }

    pub fn cyclic(&self) -> Result<CyclicConfig> {
        CyclicConfig::new(
            self.t_sim,
            self.a_iter,
            LossWeights::new(self.lambda_q, self.lambda_imp)?,
        )
    }

    /// The path configured under `name`, or a configuration error.
    pub fn require<'a>(&self, path: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Config(format!("missing required input --{name}")))
    }
}

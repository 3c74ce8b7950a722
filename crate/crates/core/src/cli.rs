//! `vqa-imp` command-line front end.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::CliConfig;
use crate::cyclic::{plan_step, ToyAnswerer};
use crate::error::{Error, Result};
use crate::generate::{build_implications, ImplicationType};
use crate::io::{
    self, merge_annotations, read_attention_maps, read_implications, read_predictions, read_rephrasings,
    read_vqa_annotations, read_vqa_questions, report_to_string, QAPair,
};
use crate::metrics::nlg::{score_all, ScoredCorpus, ScoredPair};
use crate::metrics::vqa::{
    attention_distance, consistency, robustness_report, uniform_yes_no_answers, vqa_accuracy, GroundTruth,
};
use crate::text::{answer_key, normalize};

const TOY_FEATURES: usize = 64;
const TOY_VOCAB: usize = 30;
const TOY_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Parser)]
#[command(
    name = "vqa-imp",
    version,
    about = "Implication questions and consistency metrics for VQA"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an implication dataset from questions and annotations
    Generate,
    /// Consistency of implication answers, conditioned on correct originals
    Consistency,
    /// Accuracy on rephrasings, conditioned on correct originals
    Robustness,
    /// BLEU-1..4, ROUGE-L, METEOR and CIDEr of generated questions
    Nlg,
    /// Mean Euclidean distance between paired attention maps
    Attention,
    /// Run the cyclic loss on a toy answerer and print one trace per step
    CyclicDemo,
    /// Standard VQA accuracy of a prediction file
    Accuracy,
    /// Seeded uniform yes/no answers for an implication file
    RandomPredictions,
}

#[derive(Debug, Default, Args)]
pub struct Opts {
    /// key = value file; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub questions: Option<PathBuf>,
    #[arg(long, global = true)]
    pub annotations: Option<PathBuf>,
    #[arg(long, global = true)]
    pub predictions: Option<PathBuf>,
    /// Predictions for implication questions (default: --predictions)
    #[arg(long, global = true)]
    pub implication_predictions: Option<PathBuf>,
    /// Predictions for rephrased questions (default: --predictions)
    #[arg(long, global = true)]
    pub rephrasing_predictions: Option<PathBuf>,
    #[arg(long, global = true)]
    pub implications: Option<PathBuf>,
    #[arg(long, global = true)]
    pub rephrasings: Option<PathBuf>,
    /// Implication file with generated questions
    #[arg(long, global = true)]
    pub candidates: Option<PathBuf>,
    /// Implication file with reference questions, joined on implication_id
    #[arg(long, global = true)]
    pub references: Option<PathBuf>,
    #[arg(long, global = true)]
    pub attention_a: Option<PathBuf>,
    #[arg(long, global = true)]
    pub attention_b: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated subset of logeq,nec,mutex
    #[arg(long, global = true)]
    pub types: Option<String>,
    #[arg(long, global = true)]
    pub t_sim: Option<f64>,
    #[arg(long, global = true)]
    pub a_iter: Option<u64>,
    #[arg(long, global = true)]
    pub lambda_q: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_imp: Option<f64>,
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    /// Learning rate of the demo's gradient steps
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Human-readable tables instead of JSON
    #[arg(long, global = true)]
    pub pretty: bool,
}

impl Opts {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<CliConfig> {
        let mut cfg = CliConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let paths = [
            (&mut cfg.questions, &self.questions),
            (&mut cfg.annotations, &self.annotations),
            (&mut cfg.predictions, &self.predictions),
            (&mut cfg.implication_predictions, &self.implication_predictions),
            (&mut cfg.rephrasing_predictions, &self.rephrasing_predictions),
            (&mut cfg.implications, &self.implications),
            (&mut cfg.rephrasings, &self.rephrasings),
            (&mut cfg.candidates, &self.candidates),
            (&mut cfg.references, &self.references),
            (&mut cfg.attention_a, &self.attention_a),
            (&mut cfg.attention_b, &self.attention_b),
            (&mut cfg.out, &self.out),
        ];
        for (slot, flag) in paths {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if let Some(t) = &self.types {
            cfg.set("types", t)?;
        }
        if let Some(v) = self.t_sim {
            cfg.t_sim = v;
        }
        if let Some(v) = self.a_iter {
            cfg.a_iter = v;
        }
        if let Some(v) = self.lambda_q {
            cfg.lambda_q = v;
        }
        if let Some(v) = self.lambda_imp {
            cfg.lambda_imp = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        cfg.pretty |= self.pretty;
        Ok(cfg)
    }
}

fn load_corpus(cfg: &CliConfig, need_annotations: bool) -> Result<Vec<QAPair>> {
    let mut pairs = read_vqa_questions(cfg.require(&cfg.questions, "questions")?)?;
    match &cfg.annotations {
        Some(path) => merge_annotations(&mut pairs, &read_vqa_annotations(path)?)?,
        None if need_annotations => {
            return Err(Error::Config("missing required input --annotations".into()));
        }
        None => {}
    }
    Ok(pairs)
}

fn ground_truth(cfg: &CliConfig) -> Result<GroundTruth> {
    let annotations = read_vqa_annotations(cfg.require(&cfg.annotations, "annotations")?)?;
    GroundTruth::from_annotations(annotations.values())
}

fn fallback<'a>(cfg: &'a CliConfig, primary: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    match primary {
        Some(p) => Ok(p),
        None => cfg.require(&cfg.predictions, name),
    }
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// What a subcommand prints: one JSON report or a stream of JSON lines.
enum Output {
    Report(Value),
    Lines(Vec<Value>),
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

fn cmd_generate(cfg: &CliConfig) -> Result<Output> {
    let out = cfg.require(&cfg.out, "out")?;
    let pairs = load_corpus(cfg, false)?;
    let (records, stats) = build_implications(&pairs, &cfg.types)?;
    io::write_implications(&records, out)?;
    Ok(Output::Report(json!({
        "implications": records.len(),
        "coverage": to_value(&stats),
    })))
}

fn cmd_consistency(cfg: &CliConfig) -> Result<Output> {
    let orig = read_predictions(cfg.require(&cfg.predictions, "predictions")?)?;
    let imp = read_predictions(fallback(cfg, &cfg.implication_predictions, "implication-predictions")?)?;
    let gt = ground_truth(cfg)?;
    let records = read_implications(cfg.require(&cfg.implications, "implications")?)?;
    Ok(Output::Report(to_value(&consistency(&orig, &imp, &gt, &records)?)))
}

fn cmd_robustness(cfg: &CliConfig) -> Result<Output> {
    let orig = read_predictions(cfg.require(&cfg.predictions, "predictions")?)?;
    let reph = read_predictions(fallback(cfg, &cfg.rephrasing_predictions, "rephrasing-predictions")?)?;
    let gt = ground_truth(cfg)?;
    let groups = read_rephrasings(cfg.require(&cfg.rephrasings, "rephrasings")?)?.groups;
    Ok(Output::Report(to_value(&robustness_report(
        &orig, &reph, &gt, &groups,
    )?)))
}

fn cmd_nlg(cfg: &CliConfig) -> Result<Output> {
    let candidates = read_implications(cfg.require(&cfg.candidates, "candidates")?)?;
    let references = read_implications(cfg.require(&cfg.references, "references")?)?;
    let by_id: HashMap<u64, &str> = references
        .iter()
        .map(|r| (r.implication_id, r.question.as_str()))
        .collect();
    let mut pairs = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let reference = by_id.get(&c.implication_id).ok_or(Error::NoReferences(i))?;
        pairs.push(ScoredPair {
            candidate: normalize(&c.question)?,
            references: vec![normalize(reference)?],
        });
    }
    Ok(Output::Report(to_value(&score_all(&ScoredCorpus::new(pairs)?)?)))
}

fn cmd_attention(cfg: &CliConfig) -> Result<Output> {
    let a = read_attention_maps(cfg.require(&cfg.attention_a, "attention-a")?)?;
    let b = read_attention_maps(cfg.require(&cfg.attention_b, "attention-b")?)?;
    let (pairing, mode): (Vec<(u64, u64)>, &str) = if let Some(path) = &cfg.implications {
        let pairs = read_implications(path)?
            .iter()
            .filter(|r| r.itype == ImplicationType::Logeq)
            .map(|r| (r.source_question_id, r.implication_id))
            .collect();
        (pairs, "logeq")
    } else if let Some(path) = &cfg.rephrasings {
        let pairs = read_rephrasings(path)?
            .groups
            .iter()
            .flat_map(|g| g.rephrasing_ids.iter().map(|r| (g.original_question_id, *r)))
            .collect();
        (pairs, "rephrasing")
    } else {
        (a.iter().map(|m| (m.question_id, m.question_id)).collect(), "identity")
    };
    let distance = attention_distance(&a, &b, &pairing)?;
    Ok(Output::Report(json!({
        "mean_distance": distance,
        "pairs": pairing.len(),
        "pairing": mode,
    })))
}

fn cmd_accuracy(cfg: &CliConfig) -> Result<Output> {
    let pred = read_predictions(cfg.require(&cfg.predictions, "predictions")?)?;
    let gt = ground_truth(cfg)?;
    Ok(Output::Report(json!({
        "accuracy": vqa_accuracy(&pred, &gt)?,
        "questions": pred.len(),
    })))
}

fn cmd_random_predictions(cfg: &CliConfig) -> Result<Output> {
    let out = cfg.require(&cfg.out, "out")?;
    let records = read_implications(cfg.require(&cfg.implications, "implications")?)?;
    let set = uniform_yes_no_answers(&records, cfg.seed);
    io::write_predictions(&set, out)?;
    Ok(Output::Report(json!({"predictions": set.len(), "seed": cfg.seed})))
}

/// Most frequent canonical answers (ties by key), plus yes and no.
fn toy_vocabulary(pairs: &[QAPair]) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for a in pairs.iter().filter_map(|p| p.answer.as_deref()) {
        *counts.entry(answer_key(a)).or_insert(0) += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut vocab: Vec<String> = ranked.into_iter().take(TOY_VOCAB).map(|(k, _)| k).collect();
    for yn in ["yes", "no"] {
        if !vocab.iter().any(|v| v == yn) {
            vocab.push(yn.to_owned());
        }
    }
    vocab
}

fn cmd_cyclic_demo(cfg: &CliConfig) -> Result<Output> {
    let cyclic = cfg.cyclic()?;
    let pairs: Vec<QAPair> = load_corpus(cfg, true)?
        .into_iter()
        .filter(|p| p.answer.is_some() && normalize(&p.question).is_ok())
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut toy = ToyAnswerer::new(toy_vocabulary(&pairs), TOY_FEATURES, cfg.seed, TOY_INIT_SCALE)?;
    let mut lines = vec![json!({"config": {
        "t_sim": cyclic.t_sim,
        "a_iter": cyclic.a_iter,
        "lambda_q": cyclic.weights.lambda_q,
        "lambda_imp": cyclic.weights.lambda_imp,
        "steps": cfg.steps,
        "lr": cfg.learning_rate,
        "seed": cfg.seed,
    }})];
    for step in 0..cfg.steps {
        let i = step as usize;
        let knob = ImplicationType::ALL[i % 3];
        let (plan, trace) = plan_step(&toy, &pairs[i % pairs.len()], knob, &cyclic, step)?;
        let grad = toy.batch_gradient(&[plan], &cyclic.weights);
        toy.sgd_step(&grad, cfg.learning_rate);
        lines.push(to_value(&trace));
    }
    Ok(Output::Lines(lines))
}

fn dispatch(command: &Command, cfg: &CliConfig) -> Result<Output> {
    match command {
        Command::Generate => cmd_generate(cfg),
        Command::Consistency => cmd_consistency(cfg),
        Command::Robustness => cmd_robustness(cfg),
        Command::Nlg => cmd_nlg(cfg),
        Command::Attention => cmd_attention(cfg),
        Command::CyclicDemo => cmd_cyclic_demo(cfg),
        Command::Accuracy => cmd_accuracy(cfg),
        Command::RandomPredictions => cmd_random_predictions(cfg),
    }
}

fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, rows);
            }
        }
        Value::Number(n) => {
            let s = match n.as_f64() {
                Some(x) if !n.is_u64() && !n.is_i64() => format!("{x:.6}"),
                _ => n.to_string(),
            };
            rows.push((prefix.to_owned(), s));
        }
        Value::String(s) => rows.push((prefix.to_owned(), s.clone())),
        other => rows.push((prefix.to_owned(), other.to_string())),
    }
}

fn table(v: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", v, &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {v}");
    }
    out
}

fn trace_table(lines: &[Value]) -> String {
    let mut out = String::new();
    if let Some(header) = lines.first() {
        out.push_str(&table(header));
    }
    let _ = writeln!(
        out,
        "{:>6} {:>10} {:<6} {:<12} {:>5} {:>6} {:>9} {:>9} {:>9} {:>9}",
        "iter", "question", "type", "answer", "gate", "active", "l_vqa", "l_q", "l_imp", "l_total"
    );
    for t in lines.iter().skip(1) {
        let f = |k: &str| t[k].as_f64().unwrap_or(0.0);
        let _ = writeln!(
            out,
            "{:>6} {:>10} {:<6} {:<12} {:>5} {:>6} {:>9.5} {:>9.5} {:>9.5} {:>9.5}",
            t["iteration"],
            t["question_id"],
            t["knob"].as_str().unwrap_or(""),
            t["predicted_answer"].as_str().unwrap_or(""),
            t["gate_open"],
            t["cycle_active"],
            f("l_vqa"),
            f("l_q"),
            f("l_imp"),
            f("l_total"),
        );
    }
    out
}

fn render(output: &Output, pretty: bool) -> String {
    match (output, pretty) {
        (Output::Report(v), false) => report_to_string(v) + "\n",
        (Output::Report(v), true) => table(v),
        (Output::Lines(lines), false) => lines.iter().map(|l| report_to_string(l) + "\n").collect(),
        (Output::Lines(lines), true) => trace_table(lines),
    }
}

/// Runs a parsed command line and returns what it prints on success.
/// Work runs in a thread pool of the configured size.
pub fn execute(cli: &Cli) -> Result<String> {
    let cfg = cli.opts.resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", cfg.jobs)))?;
    let output = pool.install(|| dispatch(&cli.command, &cfg))?;
    let text = render(&output, cfg.pretty);
    // demo traces may go to a file instead of standard output
    if let (Command::CyclicDemo, Some(out)) = (&cli.command, &cfg.out) {
        write_out(out, &text)?;
        return Ok(String::new());
    }
    Ok(text)
}

pub fn error_json(kind: &str, message: &str) -> String {
    report_to_string(&json!({"error": {"kind": kind, "message": message}}))
}

pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_json("UsageError", first));
            return ExitCode::from(2);
        }
    };
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}

pub fn main() -> ExitCode {
    run(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_defaults() {
        let cli = Cli::try_parse_from(["vqa-imp", "cyclic-demo", "--t-sim", "0.5", "--types", "nec"]).unwrap();
        let cfg = cli.opts.resolve().unwrap();
        assert_eq!(cfg.t_sim, 0.5);
        assert_eq!(cfg.a_iter, 5500);
        assert_eq!(cfg.types, vec![ImplicationType::Nec]);
    }

    #[test]
    fn table_flattens_nested_reports() {
        let t = table(&json!({"a": {"b": 0.5, "c": 3}, "d": null}));
        assert_eq!(t, "a.b  0.500000\na.c  3\nd    null\n");
    }

    #[test]
    fn toy_vocabulary_ranks_by_frequency() {
        let pair = |id, a: &str| QAPair {
            question_id: id,
            image_id: 0,
            question: "q".into(),
            answer: Some(a.into()),
            human_answers: None,
        };
        let v = toy_vocabulary(&[pair(1, "2"), pair(2, "red"), pair(3, "Red"), pair(4, "yes")]);
        assert_eq!(v, vec!["red", "2", "yes", "no"]);
    }
}

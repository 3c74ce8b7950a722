use std::fmt;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// What exactly was wrong with a JSON document that parsed (or failed to parse).
#[derive(Debug, Clone, PartialEq)]
pub enum JsonDefect {
    Syntax(String),
    Structure(String),
    InvalidEnum { field: String, value: String },
    EmptyGroup(u64),
}

impl fmt::Display for JsonDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JsonDefect::Syntax(msg) => write!(f, "syntax error: {msg}"),
            JsonDefect::Structure(msg) => write!(f, "unexpected structure: {msg}"),
            JsonDefect::InvalidEnum { field, value } => {
                write!(f, "invalid value {value:?} for field `{field}`")
            }
            JsonDefect::EmptyGroup(id) => write!(f, "rephrasing group for question {id} is empty"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("question is empty after normalization")]
    EmptyQuestion,
    #[error("bag-of-words vector is empty")]
    EmptyVector,
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no ground truth for question {0}")]
    MissingGroundTruth(u64),
    #[error("no prediction for question {0}")]
    MissingPrediction(u64),
    #[error("implication {0} refers to a question without prediction or ground truth")]
    DanglingImplication(u64),
    #[error("rephrasing group of question {0} cannot be resolved")]
    DanglingRephrasing(u64),
    #[error("no attention map for question {0}")]
    MissingAttentionMap(u64),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("candidate {0} has no references")]
    NoReferences(usize),
    #[error("n-gram order {0} is outside 1..=4")]
    InvalidOrder(usize),

    #[error("answer vocabularies differ")]
    VocabMismatch,
    #[error("token {0:?} is not in the distribution's vocabulary")]
    TokenOutOfVocab(String),
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    MalformedJson(JsonDefect),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("question {question_id} has {count} human answers, expected 10")]
    AnswerCountNot10 { question_id: u64, count: usize },
    #[error("annotation for unknown question {0}")]
    DanglingAnnotation(u64),
    #[error("implication {0} violates the type/answer invariant")]
    InconsistentImplication(u64),
    #[error("non-finite attention weight on line {line}")]
    NonFiniteWeight { line: usize },
    #[error("negative attention weight on line {line}")]
    NegativeWeight { line: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Stable variant name, used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyQuestion => "EmptyQuestion",
            Error::EmptyVector => "EmptyVector",
            Error::InvalidInput(_) => "InvalidInput",
            Error::MissingGroundTruth(_) => "MissingGroundTruth",
            Error::MissingPrediction(_) => "MissingPrediction",
            Error::DanglingImplication(_) => "DanglingImplication",
            Error::DanglingRephrasing(_) => "DanglingRephrasing",
            Error::MissingAttentionMap(_) => "MissingAttentionMap",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::NoReferences(_) => "NoReferences",
            Error::InvalidOrder(_) => "InvalidOrder",
            Error::VocabMismatch => "VocabMismatch",
            Error::TokenOutOfVocab(_) => "TokenOutOfVocab",
            Error::InvalidDistribution(_) => "InvalidDistribution",
            Error::Io { .. } => "IoError",
            Error::MalformedJson(_) => "MalformedJson",
            Error::MissingField(_) => "MissingField",
            Error::DuplicateId(_) => "DuplicateId",
            Error::AnswerCountNot10 { .. } => "AnswerCountNot10",
            Error::DanglingAnnotation(_) => "DanglingAnnotation",
            Error::InconsistentImplication(_) => "InconsistentImplication",
            Error::NonFiniteWeight { .. } => "NonFiniteWeight",
            Error::NegativeWeight { .. } => "NegativeWeight",
            Error::Config(_) => "ConfigError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn structure(msg: impl Into<String>) -> Self {
        Error::MalformedJson(JsonDefect::Structure(msg.into()))
    }
}

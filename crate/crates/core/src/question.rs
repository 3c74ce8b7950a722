//! Question classification and subject extraction.

use std::fmt;

use serde::Serialize;

use crate::error::Result;
use crate::text::TokenSeq;

/// Attribute slots recognized in `what <slot> is/are <subject>` questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeSlot {
    Color,
    Kind,
    Type,
    Sport,
    Animal,
    Brand,
}

impl AttributeSlot {
    pub const ALL: [AttributeSlot; 6] = [
        AttributeSlot::Color,
        AttributeSlot::Kind,
        AttributeSlot::Type,
        AttributeSlot::Sport,
        AttributeSlot::Animal,
        AttributeSlot::Brand,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttributeSlot::Color => "color",
            AttributeSlot::Kind => "kind",
            AttributeSlot::Type => "type",
            AttributeSlot::Sport => "sport",
            AttributeSlot::Animal => "animal",
            AttributeSlot::Brand => "brand",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.as_str() == token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuestionKind {
    Count,
    Attribute(AttributeSlot),
    YesNo,
    Other,
}

impl QuestionKind {
    pub fn tag(&self) -> &'static str {
        match self {
            QuestionKind::Count => "count",
            QuestionKind::Attribute(_) => "attribute",
            QuestionKind::YesNo => "yesno",
            QuestionKind::Other => "other",
        }
    }

    pub fn attribute_slot(&self) -> Option<AttributeSlot> {
        match self {
            QuestionKind::Attribute(slot) => Some(*slot),
            _ => None,
        }
    }
}

impl fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuestionKind::Attribute(slot) => write!(f, "attribute({})", slot.as_str()),
            other => f.write_str(other.tag()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Copula {
    Is,
    Are,
}

impl Copula {
    pub fn as_str(self) -> &'static str {
        match self {
            Copula::Is => "is",
            Copula::Are => "are",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedQuestion {
    pub kind: QuestionKind,
    /// The noun phrase the question is about; `None` for yes/no and other questions.
    pub subject: Option<TokenSeq>,
    /// Copula of an attribute question, used for number agreement.
    pub copula: Option<Copula>,
    pub source: TokenSeq,
}

pub const YES_NO_PREFIXES: &[&str] = &[
    "is", "are", "was", "were", "do", "does", "did", "can", "could", "has", "have", "will", "would", "should",
];

/// Tokens that end the subject of a `how many` question.
const COUNT_SUBJECT_STOPS: &[&str] = &[
    "are", "is", "can", "do", "does", "in", "was", "were", "did", "could", "have", "has", "on", "at", "of", "near",
    "under", "behind", "inside", "with", "there", "here", "visible", "shown", "pictured",
];

/// Prepositions that end the subject of an attribute question.
const ATTRIBUTE_SUBJECT_STOPS: &[&str] = &[
    "in", "on", "at", "near", "under", "behind", "inside", "with", "from", "for", "by",
];

/// Assigns a question to exactly one kind and extracts its subject.
///
/// `how many` questions whose subject would be empty (`how many are there`)
/// are classified as `Other`.
pub fn classify(q: &TokenSeq) -> Result<ParsedQuestion> {
    let tokens = q.tokens();
    let other = || ParsedQuestion {
        kind: QuestionKind::Other,
        subject: None,
        copula: None,
        source: q.clone(),
    };

    if q.starts_with(&["how", "many"]) {
        let subject: Vec<&str> = tokens[2..]
            .iter()
            .map(String::as_str)
            .take_while(|t| !COUNT_SUBJECT_STOPS.contains(t))
            .collect();
        if subject.is_empty() {
            return Ok(other());
        }
        return Ok(ParsedQuestion {
            kind: QuestionKind::Count,
            subject: Some(TokenSeq::from_tokens(subject)?),
            copula: None,
            source: q.clone(),
        });
    }

    if YES_NO_PREFIXES.contains(&q.first()) {
        return Ok(ParsedQuestion {
            kind: QuestionKind::YesNo,
            subject: None,
            copula: None,
            source: q.clone(),
        });
    }

    if tokens.len() >= 4 && tokens[0] == "what" {
        let slot = AttributeSlot::parse(&tokens[1]);
        let copula = match tokens[2].as_str() {
            "is" => Some(Copula::Is),
            "are" => Some(Copula::Are),
            _ => None,
        };
        if let (Some(slot), Some(copula)) = (slot, copula) {
            let subject: Vec<&str> = tokens[3..]
                .iter()
                .map(String::as_str)
                .take_while(|t| !ATTRIBUTE_SUBJECT_STOPS.contains(t))
                .collect();
            if !subject.is_empty() {
                return Ok(ParsedQuestion {
                    kind: QuestionKind::Attribute(slot),
                    subject: Some(TokenSeq::from_tokens(subject)?),
                    copula: Some(copula),
                    source: q.clone(),
                });
            }
        }
    }

    Ok(other())
}

//! Text normalization, English noun inflection, count parsing and
//! bag-of-words similarity.
//!
//! Everything here is pure and deterministic; the other modules rely on
//! `normalize` being the single place where surface text becomes tokens.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Characters removed during normalization. Hyphens are kept.
pub const STRIPPED_PUNCTUATION: &[char] = &['?', ',', '.', '!', '\'', '"'];

/// A non-empty sequence of lowercase tokens free of whitespace and
/// stripped punctuation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Builds a sequence from tokens that are already normalized.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::EmptyQuestion);
        }
        for t in &tokens {
            let ok = !t.is_empty()
                && !t
                    .chars()
                    .any(|c| c.is_whitespace() || STRIPPED_PUNCTUATION.contains(&c))
                && t.to_lowercase() == *t;
            if !ok {
                return Err(Error::InvalidInput(format!("token {t:?} is not normalized")));
            }
        }
        Ok(TokenSeq(tokens))
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> &str {
        &self.0[0]
    }

    pub fn last(&self) -> &str {
        &self.0[self.0.len() - 1]
    }

    pub fn starts_with(&self, prefix: &[&str]) -> bool {
        self.0.len() >= prefix.len() && self.0.iter().zip(prefix).all(|(a, b)| a == b)
    }

    /// Tokens joined by single spaces.
    pub fn joined(&self) -> String {
        self.0.join(" ")
    }

    fn with_last(&self, last: String) -> TokenSeq {
        let mut tokens = self.0.clone();
        let n = tokens.len();
        tokens[n - 1] = last;
        TokenSeq(tokens)
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.joined())
    }
}

/// Lowercases, strips `? , . ! ' "` and splits on whitespace.
pub fn normalize(text: &str) -> Result<TokenSeq> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !STRIPPED_PUNCTUATION.contains(c))
        .collect();
    let tokens: Vec<String> = cleaned.split_whitespace().map(str::to_owned).collect();
    if tokens.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    Ok(TokenSeq(tokens))
}

/// Normalized form of an answer string used for exact-match comparisons.
/// Answers that normalize to nothing compare by their trimmed lowercase text.
pub fn answer_key(answer: &str) -> String {
    match normalize(answer) {
        Ok(seq) => seq.joined(),
        Err(_) => answer.trim().to_lowercase(),
    }
}

/// Irregular (singular, plural) pairs.
pub const IRREGULAR_NOUNS: &[(&str, &str)] = &[
    ("person", "people"),
    ("man", "men"),
    ("woman", "women"),
    ("child", "children"),
    ("foot", "feet"),
    ("tooth", "teeth"),
    ("mouse", "mice"),
    ("goose", "geese"),
    ("knife", "knives"),
    ("leaf", "leaves"),
    ("wife", "wives"),
    ("life", "lives"),
    ("shelf", "shelves"),
    ("wolf", "wolves"),
    ("half", "halves"),
    ("loaf", "loaves"),
    ("calf", "calves"),
    ("tomato", "tomatoes"),
    ("potato", "potatoes"),
];

const INVARIANT_NOUNS: &[&str] = &["sheep", "deer", "fish", "moose", "aircraft", "series", "species"];

/// Singular nouns that end in `s` and must not lose it.
const SINGULAR_S_NOUNS: &[&str] = &[
    "gas", "atlas", "canvas", "alias", "bias", "iris", "lens", "plus", "yes", "this", "his",
];

/// Nouns ending in `-ie` whose plural would otherwise be read as `-y`.
const IE_NOUNS: &[&str] = &[
    "cookie", "movie", "brownie", "hippie", "zombie", "selfie", "rookie", "calorie", "goalie", "necktie", "bowtie",
    "smoothie", "pixie", "hoodie", "beanie", "birdie", "magpie", "prairie",
];

/// Nouns ending in a sibilant plus `e` whose `-es` plural is ambiguous.
const SIBILANT_E_NOUNS: &[&str] = &[
    "ache",
    "headache",
    "cache",
    "niche",
    "avalanche",
    "mustache",
    "moustache",
    "axe",
];

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

fn is_consonant(c: char) -> bool {
    c.is_ascii_alphabetic() && !is_vowel(c)
}

/// Pluralizes a single word by the inflection rule table.
pub fn pluralize_word(word: &str) -> String {
    if INVARIANT_NOUNS.contains(&word) {
        return word.to_owned();
    }
    if let Some((_, plural)) = IRREGULAR_NOUNS.iter().find(|(s, _)| *s == word) {
        return (*plural).to_owned();
    }
    let mut rev = word.chars().rev();
    let last = rev.next();
    let before = rev.next();
    match (last, before) {
        (Some('y'), Some(b)) if is_consonant(b) => format!("{}ies", &word[..word.len() - 1]),
        _ if word.ends_with('s')
            || word.ends_with('x')
            || word.ends_with('z')
            || word.ends_with("ch")
            || word.ends_with("sh") =>
        {
            format!("{word}es")
        }
        _ => format!("{word}s"),
    }
}

/// Inverse of [`pluralize_word`] on its rule table; unknown forms come back unchanged.
pub fn singularize_word(word: &str) -> String {
    if INVARIANT_NOUNS.contains(&word) {
        return word.to_owned();
    }
    if let Some((singular, _)) = IRREGULAR_NOUNS.iter().find(|(_, p)| *p == word) {
        return (*singular).to_owned();
    }
    if IRREGULAR_NOUNS.iter().any(|(s, _)| *s == word)
        || SINGULAR_S_NOUNS.contains(&word)
        || word.ends_with("ss")
        || word.ends_with("us")
        || word.ends_with("is")
    {
        return word.to_owned();
    }

    if let Some(stem) = word.strip_suffix("ies") {
        if word.len() <= 4 {
            return format!("{stem}ie");
        }
        let with_ie = format!("{stem}ie");
        if IE_NOUNS.contains(&with_ie.as_str()) {
            return with_ie;
        }
        if stem.chars().last().is_some_and(is_consonant) {
            return format!("{stem}y");
        }
        return format!("{stem}ie");
    }

    if let Some(stem) = word.strip_suffix("es") {
        let with_e = format!("{stem}e");
        if SIBILANT_E_NOUNS.contains(&with_e.as_str()) {
            return with_e;
        }
        if stem.ends_with("ss")
            || stem.ends_with("sh")
            || stem.ends_with("ch")
            || stem.ends_with('x')
            || stem.ends_with("zz")
        {
            return stem.to_owned();
        }
        if stem.ends_with('s') {
            if SINGULAR_S_NOUNS.contains(&stem) {
                return stem.to_owned();
            }
            // consonant + "us" is a singular stem (bus, cactus); vowel + "us" is "-use" (house)
            let mut tail = stem.chars().rev();
            if let (Some('s'), Some('u'), Some(c)) = (tail.next(), tail.next(), tail.next()) {
                if is_consonant(c) {
                    return stem.to_owned();
                }
            }
            return with_e;
        }
        if stem.ends_with('z') {
            return with_e;
        }
    }

    match word.strip_suffix('s') {
        Some(stem) if !stem.is_empty() => stem.to_owned(),
        _ => word.to_owned(),
    }
}

/// Pluralizes the head noun (last token) of a noun phrase.
pub fn pluralize(noun_phrase: &TokenSeq) -> TokenSeq {
    noun_phrase.with_last(pluralize_word(noun_phrase.last()))
}

/// Singularizes the head noun (last token) of a noun phrase.
pub fn singularize(noun_phrase: &TokenSeq) -> TokenSeq {
    noun_phrase.with_last(singularize_word(noun_phrase.last()))
}

const NUMBER_WORDS: [&str; 21] = [
    "zero",
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
    "twenty",
];

/// Parses a count answer: ASCII digit strings or the words zero..twenty.
pub fn parse_count(answer: &str) -> Option<u64> {
    let a = answer.trim().to_lowercase();
    let a = a.trim_end_matches(['.', '!', '?']);
    if !a.is_empty() && a.bytes().all(|b| b.is_ascii_digit()) {
        return a.parse().ok();
    }
    NUMBER_WORDS.iter().position(|w| *w == a).map(|n| n as u64)
}

/// Token multiset. Counts are always at least one.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BowVector {
    counts: BTreeMap<String, u64>,
}

impl BowVector {
    pub fn from_counts<I, S>(counts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut out = BTreeMap::new();
        for (tok, n) in counts {
            if n == 0 {
                return Err(Error::InvalidInput("bag-of-words count must be ≥ 1".into()));
            }
            *out.entry(tok.into()).or_insert(0) += n;
        }
        Ok(BowVector { counts: out })
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    fn squared_norm(&self) -> u64 {
        self.counts.values().map(|c| c * c).sum()
    }
}

impl From<&TokenSeq> for BowVector {
    fn from(seq: &TokenSeq) -> Self {
        let mut counts = BTreeMap::new();
        for t in seq.tokens() {
            *counts.entry(t.clone()).or_insert(0) += 1;
        }
        BowVector { counts }
    }
}

/// Cosine of two count vectors over their union vocabulary.
///
/// Dot product and norms are accumulated in integers, so the result is
/// exactly symmetric in its arguments.
pub fn cosine_similarity(a: &BowVector, b: &BowVector) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyVector);
    }
    let (small, large) = if a.counts.len() <= b.counts.len() {
        (a, b)
    } else {
        (b, a)
    };
    let dot: u64 = small
        .counts
        .iter()
        .filter_map(|(t, c)| large.counts.get(t).map(|d| c * d))
        .sum();
    let na = a.squared_norm() as f64;
    let nb = b.squared_norm() as f64;
    let cos = dot as f64 / (na * nb).sqrt();
    Ok(cos.clamp(0.0, 1.0))
}

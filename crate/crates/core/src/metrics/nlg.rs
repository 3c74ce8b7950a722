//! Corpus-level BLEU, ROUGE-L, METEOR and CIDEr over tokenized candidates.
//!
//! Per-pair scores are combined by summing them in sorted order, which makes
//! every metric exactly invariant to the order of pairs in the corpus.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use super::stem::porter_stem;
use crate::error::{Error, Result};
use crate::text::TokenSeq;

pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub candidate: TokenSeq,
    pub references: Vec<TokenSeq>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredCorpus {
    pairs: Vec<ScoredPair>,
}

impl ScoredCorpus {
    pub fn new(pairs: Vec<ScoredPair>) -> Result<Self> {
        if let Some(i) = pairs.iter().position(|p| p.references.is_empty()) {
            return Err(Error::NoReferences(i));
        }
        Ok(ScoredCorpus { pairs })
    }

    pub fn pairs(&self) -> &[ScoredPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn non_empty(&self) -> Result<&[ScoredPair]> {
        if self.pairs.is_empty() {
            Err(Error::EmptyCorpus)
        } else {
            Ok(&self.pairs)
        }
    }
}

fn sorted_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

// ---------------------------------------------------------------------------
// BLEU

struct BleuStats {
    matched: Vec<usize>,
    total: Vec<usize>,
    cand_len: usize,
    ref_len: usize,
}

fn bleu_stats(pair: &ScoredPair, max_n: usize) -> BleuStats {
    let cand = pair.candidate.tokens();
    let mut matched = vec![0; max_n];
    let mut total = vec![0; max_n];
    for n in 1..=max_n {
        let cand_counts = ngram_counts(cand, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &pair.references {
            for (g, c) in ngram_counts(r.tokens(), n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        total[n - 1] = cand_counts.values().sum();
        matched[n - 1] = cand_counts
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
    }
    // closest reference length, ties to the shorter one
    let ref_len = pair
        .references
        .iter()
        .map(|r| r.len())
        .min_by_key(|len| (len.abs_diff(cand.len()), *len))
        .expect("at least one reference");
    BleuStats {
        matched,
        total,
        cand_len: cand.len(),
        ref_len,
    }
}

/// Corpus BLEU-n: clipped n-gram precisions aggregated over the corpus,
/// geometric mean over orders 1..=n, brevity penalty `exp(1 - r/c)` when `c < r`.
pub fn bleu(corpus: &ScoredCorpus, n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::InvalidOrder(n));
    }
    let pairs = corpus.non_empty()?;
    let stats: Vec<BleuStats> = pairs.par_iter().map(|p| bleu_stats(p, n)).collect();
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let (mut c, mut r) = (0usize, 0usize);
    for s in &stats {
        for k in 0..n {
            matched[k] += s.matched[k];
            total[k] += s.total[k];
        }
        c += s.cand_len;
        r += s.ref_len;
    }
    if matched.contains(&0) {
        return Ok(0.0);
    }
    let log_precision: f64 = matched
        .iter()
        .zip(&total)
        .map(|(m, t)| (*m as f64 / *t as f64).ln())
        .sum::<f64>()
        / n as f64;
    let brevity = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(brevity * log_precision.exp())
}

// ---------------------------------------------------------------------------
// ROUGE-L

pub fn lcs_length(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_l_pair(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    let lcs = lcs_length(candidate.tokens(), reference.tokens());
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// LCS F-measure with β = 1.2, best reference per pair, mean over pairs.
pub fn rouge_l(corpus: &ScoredCorpus) -> Result<f64> {
    let pairs = corpus.non_empty()?;
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|p| {
            p.references
                .iter()
                .map(|r| rouge_l_pair(&p.candidate, r))
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(sorted_mean(scores))
}

// ---------------------------------------------------------------------------
// METEOR

/// Aligned (candidate index, reference index) pairs: exact matches first,
/// then Porter-stem matches among the remaining words. Each stage scans
/// candidate words left to right and takes the leftmost free reference word.
fn meteor_alignment(candidate: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut cand_used = vec![false; candidate.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut alignment = Vec::new();

    let mut stage = |cand_forms: &[String], ref_forms: &[String]| {
        for (i, c) in cand_forms.iter().enumerate() {
            if cand_used[i] {
                continue;
            }
            if let Some(j) = (0..ref_forms.len()).find(|&j| !ref_used[j] && ref_forms[j] == *c) {
                cand_used[i] = true;
                ref_used[j] = true;
                alignment.push((i, j));
            }
        }
    };
    stage(candidate, reference);
    let cand_stems: Vec<String> = candidate.iter().map(|w| porter_stem(w)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|w| porter_stem(w)).collect();
    stage(&cand_stems, &ref_stems);

    alignment.sort_unstable();
    alignment
}

fn chunk_count(alignment: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(i, j) in alignment {
        match prev {
            Some((pi, pj)) if i == pi + 1 && j == pj + 1 => {}
            _ => chunks += 1,
        }
        prev = Some((i, j));
    }
    chunks
}

/// METEOR score of one candidate against one reference.
pub fn meteor_pair(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    let alignment = meteor_alignment(candidate.tokens(), reference.tokens());
    let matches = alignment.len();
    if matches == 0 {
        return 0.0;
    }
    let p = matches as f64 / candidate.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let frag = chunk_count(&alignment) as f64 / matches as f64;
    let penalty = 0.5 * frag.powi(3);
    f_mean * (1.0 - penalty)
}

/// Exact + stem METEOR, best reference per pair, mean over pairs.
pub fn meteor(corpus: &ScoredCorpus) -> Result<f64> {
    let pairs = corpus.non_empty()?;
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|p| {
            p.references
                .iter()
                .map(|r| meteor_pair(&p.candidate, r))
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(sorted_mean(scores))
}

// ---------------------------------------------------------------------------
// CIDEr

// ordered so that float sums do not depend on hash seeds
type NgramVec<'a> = BTreeMap<&'a [String], f64>;

fn tfidf_vectors<'a>(tokens: &'a [String], idf: &dyn Fn(&[String]) -> f64) -> Vec<NgramVec<'a>> {
    (1..=CIDER_MAX_ORDER)
        .map(|n| {
            ngram_counts(tokens, n)
                .into_iter()
                .map(|(g, c)| (g, c as f64 * idf(g)))
                .collect()
        })
        .collect()
}

fn cosine(a: &NgramVec, b: &NgramVec) -> f64 {
    let norm = |v: &NgramVec| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(g, x)| b.get(g).map(|y| x * y)).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// CIDEr: per order n = 1..4, TF-IDF cosine between candidate and each
/// reference (IDF = ln(N / df) with df counted over reference sets),
/// averaged over references and orders, scaled by 10, mean over pairs.
pub fn cider(corpus: &ScoredCorpus) -> Result<f64> {
    let pairs = corpus.non_empty()?;
    let mut df: HashMap<&[String], usize> = HashMap::new();
    for p in pairs {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for r in &p.references {
            for n in 1..=CIDER_MAX_ORDER {
                if r.len() >= n {
                    seen.extend(r.tokens().windows(n));
                }
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (pairs.len() as f64).ln();
    let idf = |g: &[String]| log_n - (df.get(g).copied().unwrap_or(0).max(1) as f64).ln();

    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|p| {
            let cand = tfidf_vectors(p.candidate.tokens(), &idf);
            let per_ref: f64 = p
                .references
                .iter()
                .map(|r| {
                    let rv = tfidf_vectors(r.tokens(), &idf);
                    cand.iter().zip(&rv).map(|(c, r)| cosine(c, r)).sum::<f64>() / CIDER_MAX_ORDER as f64
                })
                .sum();
            10.0 * per_ref / p.references.len() as f64
        })
        .collect();
    Ok(sorted_mean(scores))
}

/// All corpus metrics in one report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NlgReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
}

pub fn score_all(corpus: &ScoredCorpus) -> Result<NlgReport> {
    Ok(NlgReport {
        bleu1: bleu(corpus, 1)?,
        bleu2: bleu(corpus, 2)?,
        bleu3: bleu(corpus, 3)?,
        bleu4: bleu(corpus, 4)?,
        rouge_l: rouge_l(corpus)?,
        meteor: meteor(corpus)?,
        cider: cider(corpus)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::normalize;

    fn corpus(pairs: &[(&str, &[&str])]) -> ScoredCorpus {
        ScoredCorpus::new(
            pairs
                .iter()
                .map(|(c, refs)| ScoredPair {
                    candidate: normalize(c).unwrap(),
                    references: refs.iter().map(|r| normalize(r).unwrap()).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn empty_corpus_errors() {
        let empty = ScoredCorpus::default();
        assert!(matches!(bleu(&empty, 1), Err(Error::EmptyCorpus)));
        assert!(matches!(rouge_l(&empty), Err(Error::EmptyCorpus)));
        assert!(matches!(meteor(&empty), Err(Error::EmptyCorpus)));
        assert!(matches!(cider(&empty), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn bleu_rejects_bad_order_and_missing_refs() {
        let c = corpus(&[("a b", &["a b"])]);
        assert!(matches!(bleu(&c, 0), Err(Error::InvalidOrder(0))));
        assert!(matches!(bleu(&c, 5), Err(Error::InvalidOrder(5))));
        let bad = ScoredCorpus::new(vec![ScoredPair {
            candidate: normalize("a").unwrap(),
            references: vec![],
        }]);
        assert!(matches!(bad, Err(Error::NoReferences(0))));
    }

    #[test]
    fn bleu_brevity_penalty() {
        // c = 2, r = 4, precisions 1
        let c = corpus(&[("a b", &["a b c d"])]);
        let expected = (1.0f64 - 2.0).exp();
        assert!((bleu(&c, 1).unwrap() - expected).abs() < 1e-12);
        // closest reference length wins
        let c = corpus(&[("a b", &["a b c d", "a b x"])]);
        assert!((bleu(&c, 1).unwrap() - (1.0f64 - 1.5).exp()).abs() < 1e-12);
    }

    #[test]
    fn bleu_clips_repeated_ngrams() {
        let c = corpus(&[("the the the the", &["the cat"])]);
        // one "the" clipped match out of 4, no brevity penalty (c=4 > r=2)
        assert!((bleu(&c, 1).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn lcs_basics() {
        let t = |s: &str| normalize(s).unwrap().tokens().to_vec();
        assert_eq!(lcs_length(&t("a b c"), &t("a c")), 2);
        assert_eq!(lcs_length(&t("a b c d"), &t("d c b a")), 1);
        assert_eq!(lcs_length(&t("x"), &t("y")), 0);
    }

    #[test]
    fn meteor_fragmentation() {
        let c = corpus(&[("a b c d", &["c d a b"])]);
        // 4 matches in 2 chunks
        let expected = 1.0 - 0.5 * (2.0f64 / 4.0).powi(3);
        assert!((meteor(&c).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn meteor_stem_stage() {
        let c = corpus(&[("dogs", &["dog"])]);
        assert!((meteor(&c).unwrap() - 0.5).abs() < 1e-12);
        let c = corpus(&[("cats", &["dog"])]);
        assert_eq!(meteor(&c).unwrap(), 0.0);
    }

    #[test]
    fn cider_degenerate_single_pair() {
        let c = corpus(&[("are there any people", &["are there any people"])]);
        assert_eq!(cider(&c).unwrap(), 0.0);
    }
}

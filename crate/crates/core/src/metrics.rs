//! Corpus BLEU and RIBES over pre-tokenised, single-reference corpora.
//!
//! Both functions are generic over the token type so they work on surface
//! strings and on vocabulary ids alike. Scores are in `[0, 1]`.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// RIBES exponent on unigram precision.
pub const RIBES_ALPHA: f64 = 0.25;
/// RIBES exponent on the brevity penalty.
pub const RIBES_BETA: f64 = 0.10;

/// Clipped n-gram statistics, aggregated over any number of sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NGramStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_default() += 1;
        }
    }
    out
}

impl NGramStats {
    pub fn sentence<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> Self {
        let mut s = NGramStats {
            hyp_len: hyp.len() as u64,
            ref_len: reference.len() as u64,
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            s.matches[n - 1] = h
                .iter()
                .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
                .sum();
            s.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
        }
        s
    }

    pub fn add(&mut self, other: &NGramStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp().min(1.0)
    }

    /// Unsmoothed BLEU; zero as soon as any order has no match.
    pub fn bleu(&self) -> f64 {
        if self.matches.contains(&0) {
            return 0.0;
        }
        let log_p: f64 = (0..MAX_ORDER)
            .map(|n| (self.matches[n] as f64 / self.totals[n] as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        self.brevity_penalty() * log_p.exp()
    }
}

fn check_lengths<T>(hyps: &[T], refs: &[T]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::contract(format!(
            "{} hypotheses against {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if refs.is_empty() {
        return Err(Error::contract("cannot score an empty corpus"));
    }
    Ok(())
}

pub fn bleu_corpus<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    check_lengths(hyps, refs)?;
    let mut stats = NGramStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        stats.add(&NGramStats::sentence(h, r));
    }
    Ok(stats.bleu())
}

fn count_subslice<T: Eq>(haystack: &[T], needle: &[T]) -> usize {
    if needle.len() > haystack.len() {
        return 0;
    }
    haystack.windows(needle.len()).filter(|w| *w == needle).count()
}

fn find_subslice<T: Eq>(haystack: &[T], needle: &[T]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Reference positions of the hypothesis words that can be aligned.
///
/// A word occurring exactly once on both sides aligns directly. Otherwise the
/// word is extended with growing right and then left context until that
/// n-gram is unique on both sides; words that never become unique are
/// dropped.
pub fn word_rank_alignment<T: Eq>(hyp: &[T], reference: &[T]) -> Vec<usize> {
    let mut order = Vec::new();
    let n = hyp.len();
    for (i, word) in hyp.iter().enumerate() {
        if !reference.contains(word) {
            continue;
        }
        let in_hyp = hyp.iter().filter(|w| *w == word).count();
        let in_ref = reference.iter().filter(|w| *w == word).count();
        if in_hyp == 1 && in_ref == 1 {
            order.push(reference.iter().position(|w| w == word).expect("present"));
            continue;
        }
        let max_window = i.max(n - i + 1);
        for window in 1..max_window {
            if i + window < n {
                let right = &hyp[i..=i + window];
                if count_subslice(reference, right) == 1 && count_subslice(hyp, right) == 1 {
                    order.push(find_subslice(reference, right).expect("counted once"));
                    break;
                }
            }
            if window <= i {
                let left = &hyp[i - window..=i];
                if count_subslice(reference, left) == 1 && count_subslice(hyp, left) == 1 {
                    order.push(find_subslice(reference, left).expect("counted once") + window);
                    break;
                }
            }
        }
    }
    order
}

/// Normalised Kendall's τ: fraction of ascending pairs. Zero when fewer than
/// two words are aligned.
pub fn normalized_kendall_tau(order: &[usize]) -> f64 {
    let n = order.len();
    if n < 2 {
        return 0.0;
    }
    let mut ascending = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            if order[i] < order[j] {
                ascending += 1;
            }
        }
    }
    ascending as f64 / (n * (n - 1) / 2) as f64
}

pub fn ribes_sentence<T: Eq>(hyp: &[T], reference: &[T]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let order = word_rank_alignment(hyp, reference);
    let nkt = normalized_kendall_tau(&order);
    if nkt == 0.0 {
        return 0.0;
    }
    let precision = order.len() as f64 / hyp.len() as f64;
    let bp = (1.0 - reference.len() as f64 / hyp.len() as f64).exp().min(1.0);
    nkt * precision.powf(RIBES_ALPHA) * bp.powf(RIBES_BETA)
}

/// Mean of sentence-level RIBES scores.
pub fn ribes_corpus<T: Eq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    check_lengths(hyps, refs)?;
    let total: f64 = hyps.iter().zip(refs).map(|(h, r)| ribes_sentence(h, r)).sum();
    Ok(total / hyps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreReport {
    pub bleu: f64,
    pub ribes: f64,
    pub sentences: usize,
}

impl std::fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BLEU = {:.2}\nRIBES = {:.2}\nsentences = {}",
            100.0 * self.bleu,
            100.0 * self.ribes,
            self.sentences
        )
    }
}

pub fn score_report<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<ScoreReport> {
    Ok(ScoreReport {
        bleu: bleu_corpus(hyps, refs)?,
        ribes: ribes_corpus(hyps, refs)?,
        sentences: hyps.len(),
    })
}

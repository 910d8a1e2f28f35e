//! Greedy decoding, beam search and an exhaustive-search oracle.
//!
//! All three share one convention: `max_len` bounds the number of content
//! tokens. A hypothesis still open after `max_len` tokens is closed with a
//! forced end-of-sentence whose log-probability is counted, so every
//! returned score is the log-probability of a complete sequence ending in
//! `</s>`. Ties are broken by parent order and then by lowest token id.

use std::cmp::Ordering;

use crate::data::{ContextualExample, EOS};
use crate::error::{Error, Result};
use crate::model::{DecoderState, EncodedSource, Model};
use crate::tape::Tape;

/// Default ceiling on the number of sequences `exhaustive_decode` scores.
pub const EXHAUSTIVE_CAP: u128 = 1_000_000;

/// A finished translation: content tokens (no `</s>`) and the total
/// log-probability including the closing `</s>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Log-probability divided by the number of emitted symbols (`</s>`
    /// included).
    pub fn normalized(&self) -> f64 {
        self.log_prob / (self.tokens.len() + 1) as f64
    }

    pub fn score(&self, length_norm: bool) -> f64 {
        if length_norm {
            self.normalized()
        } else {
            self.log_prob
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub length_norm: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            max_len: 80,
            length_norm: true,
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn check_max_len(max_len: usize) -> Result<()> {
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    Ok(())
}

/// Emits the arg-max token at every step (lowest id on ties) until `</s>`
/// or `max_len` content tokens.
pub fn greedy_decode(model: &Model, example: &ContextualExample, max_len: usize) -> Result<Hypothesis> {
    check_max_len(max_len)?;
    let mut tape = Tape::new(&model.params);
    let enc = model.encode(&mut tape, example, None)?;
    let mut state = model.initial_state(&enc);
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    loop {
        let out = model.decoder_step(&mut tape, &enc, &state, None)?;
        let lp = tape.value(out.log_probs);
        let token = if tokens.len() == max_len { EOS } else { argmax(lp) };
        log_prob += lp[token];
        if token == EOS {
            return Ok(Hypothesis {
                tokens,
                log_prob,
                finished: true,
            });
        }
        tokens.push(token);
        state = model.advance(&out, token)?;
    }
}

struct Live {
    tokens: Vec<usize>,
    log_prob: f64,
    state: DecoderState,
}

struct Candidate {
    total: f64,
    step: f64,
    parent: usize,
    token: usize,
}

fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.total
        .total_cmp(&a.total)
        .then(a.parent.cmp(&b.parent))
        .then(b.step.total_cmp(&a.step))
        .then(a.token.cmp(&b.token))
}

/// Standard beam search. Each step keeps the best `B − |finished|`
/// expansions; expansions ending in `</s>` retire to the finished pool.
/// Returns the pool sorted by score (length-normalised when requested),
/// best first.
pub fn beam_search(model: &Model, example: &ContextualExample, config: &BeamConfig) -> Result<Vec<Hypothesis>> {
    if config.beam_size == 0 {
        return Err(Error::contract("beam size must be at least 1"));
    }
    check_max_len(config.max_len)?;
    let mut tape = Tape::new(&model.params);
    let enc = model.encode(&mut tape, example, None)?;
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.initial_state(&enc),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for t in 0..=config.max_len {
        if live.is_empty() || finished.len() >= config.beam_size {
            break;
        }
        let mut outs = Vec::with_capacity(live.len());
        let mut candidates = Vec::new();
        for (parent, h) in live.iter().enumerate() {
            let out = model.decoder_step(&mut tape, &enc, &h.state, None)?;
            let lp = tape.value(out.log_probs);
            if t == config.max_len {
                candidates.push(Candidate {
                    total: h.log_prob + lp[EOS],
                    step: lp[EOS],
                    parent,
                    token: EOS,
                });
            } else {
                for (token, &step) in lp.iter().enumerate() {
                    candidates.push(Candidate {
                        total: h.log_prob + step,
                        step,
                        parent,
                        token,
                    });
                }
            }
            outs.push(out);
        }
        candidates.sort_by(candidate_order);
        candidates.truncate(config.beam_size - finished.len());
        let mut next = Vec::with_capacity(candidates.len());
        for c in candidates {
            let parent = &live[c.parent];
            if c.token == EOS {
                finished.push(Hypothesis {
                    tokens: parent.tokens.clone(),
                    log_prob: c.total,
                    finished: true,
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(c.token);
                next.push(Live {
                    tokens,
                    log_prob: c.total,
                    state: model.advance(&outs[c.parent], c.token)?,
                });
            }
        }
        live = next;
    }
    // stable sort keeps retirement order among equal scores
    finished.sort_by(|a, b| b.score(config.length_norm).total_cmp(&a.score(config.length_norm)));
    Ok(finished)
}

/// Best hypothesis of [`beam_search`].
pub fn beam_best(model: &Model, example: &ContextualExample, config: &BeamConfig) -> Result<Hypothesis> {
    beam_search(model, example, config)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::contract("beam search produced no hypothesis"))
}

/// Number of complete sequences with at most `max_len` content tokens over
/// a vocabulary of `vocab` symbols (content tokens are every id but `</s>`).
pub fn sequence_count(vocab: usize, max_len: usize) -> u128 {
    let branch = vocab.saturating_sub(1) as u128;
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=max_len {
        total = total.saturating_add(level);
        level = level.saturating_mul(branch);
    }
    total
}

/// Scores every sequence of up to `max_len` content tokens followed by
/// `</s>` and returns the true optimum (first in lexicographic id order on
/// ties). Refuses when the enumeration would exceed `cap`.
pub fn exhaustive_decode(model: &Model, example: &ContextualExample, max_len: usize, cap: u128) -> Result<Hypothesis> {
    let count = sequence_count(model.config.tgt_vocab, max_len);
    if count > cap {
        return Err(Error::CapExceeded {
            count,
            cap,
            detail: format!("vocabulary {} with max_len {max_len}", model.config.tgt_vocab),
        });
    }
    let mut tape = Tape::new(&model.params);
    let enc = model.encode(&mut tape, example, None)?;
    let mut best: Option<Hypothesis> = None;
    let mut prefix = Vec::new();
    let state = model.initial_state(&enc);
    search(model, &mut tape, &enc, state, 0.0, &mut prefix, max_len, &mut best)?;
    best.ok_or_else(|| Error::contract("exhaustive search visited no sequence"))
}

#[allow(clippy::too_many_arguments)]
fn search(
    model: &Model,
    tape: &mut Tape<'_>,
    enc: &EncodedSource,
    state: DecoderState,
    log_prob: f64,
    prefix: &mut Vec<usize>,
    max_len: usize,
    best: &mut Option<Hypothesis>,
) -> Result<()> {
    let out = model.decoder_step(tape, enc, &state, None)?;
    let lp = tape.value(out.log_probs).to_vec();
    let closed = log_prob + lp[EOS];
    if best.as_ref().is_none_or(|b| closed > b.log_prob) {
        *best = Some(Hypothesis {
            tokens: prefix.clone(),
            log_prob: closed,
            finished: true,
        });
    }
    if prefix.len() == max_len {
        return Ok(());
    }
    for (token, &step) in lp.iter().enumerate() {
        if token == EOS {
            continue;
        }
        prefix.push(token);
        let next = model.advance(&out, token)?;
        search(model, tape, enc, next, log_prob + step, prefix, max_len, best)?;
        prefix.pop();
    }
    Ok(())
}

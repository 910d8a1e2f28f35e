//! Adadelta training with gradient clipping, greedy-BLEU early stopping and
//! corpus subsampling.
//!
//! The training log is plain text, one record per line, tab-separated
//! `key=value` fields after a record tag:
//!
//! ```text
//! train  step=12  epoch=1  batch=11  loss=1.234567  tokens=87  clip_scale=1.000000
//! valid  step=50  epoch=2  bleu=0.412345  best=0.412345  bad=0
//! stop   step=300 epoch=6  reason=patience
//! ```
//!
//! Floats use six decimals and no timings are written, so a rerun with the
//! same seed and `threads = 1` reproduces the log byte for byte.

use std::io::Write;

use rand::seq::index;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, ContextualExample};
use crate::decoding::greedy_decode;
use crate::error::{Error, Result};
use crate::layers::Dropout;
use crate::metrics::bleu_corpus;
use crate::model::Model;
use crate::tape::{Gradients, ParamStore, Tape};

pub const ADADELTA_RHO: f64 = 0.95;
pub const ADADELTA_EPS: f64 = 1e-6;

/// Fractions of the training corpus used by the data-size ablation.
pub const ABLATION_FRACTIONS: [f64; 5] = [0.05, 0.1, 0.2, 0.4, 1.0];

/// Running averages of squared gradients and squared updates, one buffer
/// per parameter.
#[derive(Debug, Clone)]
pub struct AdadeltaState {
    pub rho: f64,
    pub eps: f64,
    pub sq_grad: Vec<Vec<f64>>,
    pub sq_update: Vec<Vec<f64>>,
}

impl AdadeltaState {
    pub fn new(params: &ParamStore, rho: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        AdadeltaState {
            rho,
            eps,
            sq_grad: zeros.clone(),
            sq_update: zeros,
        }
    }
}

/// One Adadelta step. Parameters without a gradient are treated as having
/// a zero gradient, so their accumulators still decay.
pub fn adadelta_update(params: &mut ParamStore, grads: &Gradients, state: &mut AdadeltaState) -> Result<()> {
    if state.sq_grad.len() != params.len() {
        return Err(Error::contract("optimizer state does not match the parameter store"));
    }
    for (id, g) in grads.iter() {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "gradient of {} is non-finite at entry {i}",
                params.name(id)
            )));
        }
    }
    let (rho, eps) = (state.rho, state.eps);
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let g = grads.get(id);
        let eg = &mut state.sq_grad[id.0];
        let ed = &mut state.sq_update[id.0];
        let values = params.get_mut(id).values_mut();
        for k in 0..values.len() {
            let gk = g.map_or(0.0, |g| g[k]);
            eg[k] = rho * eg[k] + (1.0 - rho) * gk * gk;
            let delta = -((ed[k] + eps).sqrt() / (eg[k] + eps).sqrt()) * gk;
            ed[k] = rho * ed[k] + (1.0 - rho) * delta * delta;
            values[k] += delta;
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm` and
/// returns the factor applied.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "clip norm must be positive");
    let norm = grads.global_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.scale(scale);
        scale
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub clip_norm: f64,
    pub max_epochs: usize,
    /// Validations without improvement tolerated before stopping.
    pub patience: usize,
    /// Steps between validations.
    pub valid_interval: usize,
    /// Greedy decoding length bound during validation.
    pub valid_max_len: usize,
    pub fraction: f64,
    pub seed: u64,
    pub threads: usize,
    pub bucketing: bool,
    pub rho: f64,
    pub eps: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 32,
            clip_norm: 1.0,
            max_epochs: 10,
            patience: 5,
            valid_interval: 200,
            valid_max_len: 50,
            fraction: 1.0,
            seed: 1234,
            threads: 1,
            bucketing: true,
            rho: ADADELTA_RHO,
            eps: ADADELTA_EPS,
        }
    }
}

impl TrainingConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("valid_interval", self.valid_interval),
            ("valid_max_len", self.valid_max_len),
            ("threads", self.threads),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be at least 1")));
            }
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::contract("clip norm must be positive"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::contract(format!("fraction must lie in (0, 1], got {}", self.fraction)));
        }
        if !(0.0..1.0).contains(&self.rho) || !(self.eps > 0.0) {
            return Err(Error::contract("adadelta needs 0 <= rho < 1 and eps > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    NoImprovement,
    Stop,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EarlyStopState {
    pub best_bleu: Option<f64>,
    /// Step whose parameters are kept as the best checkpoint.
    pub best_step: Option<usize>,
    pub bad_evals: usize,
}

impl EarlyStopState {
    /// Records a validation score. Only strict improvements reset the
    /// counter; the run stops once more than `patience` evaluations in a row
    /// fail to improve.
    pub fn observe(&mut self, bleu: f64, step: usize, patience: usize) -> Verdict {
        if self.best_bleu.is_none_or(|b| bleu > b) {
            self.best_bleu = Some(bleu);
            self.best_step = Some(step);
            self.bad_evals = 0;
            Verdict::Improved
        } else {
            self.bad_evals += 1;
            if self.bad_evals > patience {
                Verdict::Stop
            } else {
                Verdict::NoImprovement
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the validation with the highest BLEU.
    pub best_params: ParamStore,
    pub early_stop: EarlyStopState,
    pub steps: usize,
    pub epochs: usize,
    pub stop_reason: StopReason,
    /// Per-token training loss of the last step.
    pub last_loss: f64,
}

/// `⌈fraction · n⌉`, with products that are integral up to rounding noise
/// taken as exact.
pub fn subsample_size(n: usize, fraction: f64) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * r.max(1.0) { r } else { x.ceil() };
    (k as usize).min(n)
}

/// Seeded subset of `⌈fraction · N⌉` examples kept in corpus order. Each
/// example carries its own context sentence, so linkage survives even when
/// the preceding example is dropped.
pub fn subsample_corpus(corpus: &[ContextualExample], fraction: f64, seed: u64) -> Result<Vec<ContextualExample>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::contract(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let k = subsample_size(corpus.len(), fraction);
    if k == corpus.len() {
        return Ok(corpus.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, corpus.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| corpus[i].clone()).collect())
}

/// Summed negative log-likelihood and its gradient over `examples`, split
/// into `threads` contiguous shards on independent tapes. Shard gradients
/// are added in shard order. `dropout_seeds`, one per example, switch
/// dropout on.
pub fn batch_gradients(
    model: &Model,
    examples: &[ContextualExample],
    dropout_seeds: Option<&[u64]>,
    threads: usize,
) -> Result<(f64, Gradients)> {
    let threads = threads.max(1).min(examples.len().max(1));
    let shard = examples.len().div_ceil(threads).max(1);
    let run = |range: std::ops::Range<usize>| -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(&model.params);
        let mut picks = Vec::new();
        for i in range {
            let ex = &examples[i];
            match dropout_seeds {
                Some(seeds) if model.config.dropout_rate > 0.0 => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
                    let mut d = Dropout::new(model.config.dropout_rate, &mut rng)?;
                    picks.extend(model.target_log_probs(&mut tape, ex, Some(&mut d))?);
                }
                _ => picks.extend(model.target_log_probs(&mut tape, ex, None)?),
            }
        }
        let total = tape.sum_scalars(&picks)?;
        let loss = tape.scale(total, -1.0)?;
        let grads = tape.backward(loss)?;
        Ok((tape.scalar(loss), grads))
    };
    let ranges: Vec<_> = (0..examples.len())
        .step_by(shard)
        .map(|s| s..(s + shard).min(examples.len()))
        .collect();
    let results: Vec<Result<(f64, Gradients)>> = if ranges.len() <= 1 {
        ranges.into_iter().map(run).collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = ranges.into_iter().map(|r| scope.spawn(move || run(r))).collect();
            handles.into_iter().map(|h| h.join().expect("shard thread panicked")).collect()
        })
    };
    let mut loss = 0.0;
    let mut grads = Gradients::empty(model.params.len());
    for r in results {
        let (l, g) = r?;
        loss += l;
        grads.add(&g);
    }
    Ok((loss, grads))
}

/// Mean negative log-likelihood per target token, dropout off.
pub fn per_token_nll(model: &Model, examples: &[ContextualExample]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for ex in examples {
        total -= model.sequence_log_prob(ex)?;
        tokens += ex.target.len();
    }
    if tokens == 0 {
        return Err(Error::contract("no target tokens to score"));
    }
    Ok(total / tokens as f64)
}

/// Greedy translations of every example's source side.
pub fn greedy_translations(model: &Model, examples: &[ContextualExample], max_len: usize) -> Result<Vec<Vec<usize>>> {
    examples
        .iter()
        .map(|ex| greedy_decode(model, ex, max_len).map(|h| h.tokens))
        .collect()
}

/// Corpus BLEU of greedy translations against the references.
pub fn greedy_bleu(model: &Model, examples: &[ContextualExample], max_len: usize) -> Result<f64> {
    let hyps = greedy_translations(model, examples, max_len)?;
    let refs: Vec<Vec<usize>> = examples.iter().map(|e| e.reference().to_vec()).collect();
    bleu_corpus(&hyps, &refs)
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("training log", e)
}

/// Trains `model` in place. Minibatches are teacher-forced with dropout on,
/// the loss is averaged per target token, gradients are clipped and fed to
/// Adadelta. Every `valid_interval` steps (and after the final step) the
/// validation sources are greedy-decoded and scored with BLEU. The returned
/// outcome holds the parameters of the best validation; `model` keeps the
/// final ones.
pub fn train(
    model: &mut Model,
    corpus: &[ContextualExample],
    valid: &[ContextualExample],
    config: &TrainingConfig,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::contract("training corpus is empty"));
    }
    if valid.is_empty() {
        return Err(Error::contract("validation set is empty"));
    }
    let corpus = subsample_corpus(corpus, config.fraction, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = AdadeltaState::new(&model.params, config.rho, config.eps);
    let mut early = EarlyStopState::default();
    let mut best_params = model.params.clone();
    let mut step = 0usize;
    let mut last_loss = f64::NAN;
    let mut validated_at = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut epoch = 0usize;

    let mut validate = |model: &Model, step: usize, epoch: usize, log: &mut dyn Write| -> Result<Verdict> {
        let bleu = greedy_bleu(model, valid, config.valid_max_len)?;
        let verdict = early.observe(bleu, step, config.patience);
        if verdict == Verdict::Improved {
            best_params = model.params.clone();
        }
        writeln!(
            log,
            "valid\tstep={step}\tepoch={epoch}\tbleu={bleu:.6}\tbest={:.6}\tbad={}",
            early.best_bleu.unwrap_or(0.0),
            early.bad_evals
        )
        .map_err(io_err)?;
        Ok(verdict)
    };

    'epochs: while epoch < config.max_epochs {
        epoch += 1;
        let batches = make_batches(&corpus, config.batch_size, config.bucketing, rng.next_u64())?;
        for (b, batch) in batches.iter().enumerate() {
            step += 1;
            let examples = batch.examples();
            let seeds: Vec<u64> = examples.iter().map(|_| rng.next_u64()).collect();
            let (loss, mut grads) = batch_gradients(model, &examples, Some(&seeds), config.threads)?;
            let tokens = batch.target_tokens();
            let loss = loss / tokens as f64;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is non-finite at step {step} (epoch {epoch}, batch {b})"
                )));
            }
            grads.scale(1.0 / tokens as f64);
            let clip_scale = clip_gradients(&mut grads, config.clip_norm);
            adadelta_update(&mut model.params, &grads, &mut optimizer)?;
            last_loss = loss;
            writeln!(
                log,
                "train\tstep={step}\tepoch={epoch}\tbatch={b}\tloss={loss:.6}\ttokens={tokens}\tclip_scale={clip_scale:.6}"
            )
            .map_err(io_err)?;
            if step.is_multiple_of(config.valid_interval) {
                validated_at = step;
                if validate(model, step, epoch, log)? == Verdict::Stop {
                    stop_reason = StopReason::Patience;
                    break 'epochs;
                }
            }
        }
    }
    if validated_at != step {
        validate(model, step, epoch, log)?;
    }
    writeln!(log, "stop\tstep={step}\tepoch={epoch}\treason={}", stop_reason.as_str()).map_err(io_err)?;
    Ok(TrainOutcome {
        best_params,
        early_stop: early,
        steps: step,
        epochs: epoch,
        stop_reason,
        last_loss,
    })
}

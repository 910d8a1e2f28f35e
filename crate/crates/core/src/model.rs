//! Baseline attention model and its larger-context extension.
//!
//! Both share the same skeleton: a bidirectional GRU encoder produces
//! annotation vectors, the decoder reads them through a feedforward
//! attention and advances a GRU state. The larger-context model adds a
//! second bidirectional encoder over the preceding source sentence and a
//! second attention that also sees the current source vector; its decoder
//! GRU consumes `[ŷ; s; c]` instead of `[ŷ; s]`.
//!
//! Canonical parameter names:
//!
//! | group          | names                                                      |
//! |----------------|------------------------------------------------------------|
//! | embeddings     | `src_emb.table`, `tgt_emb.table`                           |
//! | source encoder | `enc_fwd.{w,u_gates,u_cand,b}`, `enc_bwd.{..}`             |
//! | context enc.   | `ctx_enc_fwd.{..}`, `ctx_enc_bwd.{..}` (LC-NMT only)       |
//! | decoder init   | `dec_init.{w,b}`                                           |
//! | attention      | `att.{w_emb,w_state,w_annot,b,v,v_bias}`                   |
//! | context att.   | `ctx_att.{w_emb,w_state,w_annot,w_extra,b,v,v_bias}` (LC)  |
//! | decoder GRU    | `dec.{w,u_gates,u_cand,b}`                                 |
//! | output         | `out.{w,b}`                                                |

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ContextualExample, BOS, EOS};
use crate::error::{Error, Result};
use crate::layers::{self, Attention, Dropout, Embedding, GruCell, OutputProjection, INIT_STD};
use crate::tape::{ParamStore, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Attention model conditioned on the current source sentence only.
    Nmt,
    /// Adds the preceding source sentence through a context encoder and
    /// context attention.
    LcNmt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    pub word_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    /// Per-direction width of the context encoder (LC-NMT only).
    pub ctx_enc_hidden: Option<usize>,
    pub attn_hidden: usize,
    pub dropout_rate: f64,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
}

impl ModelConfig {
    /// Full-size dimensions: 620-dim words, 1000-unit encoder and decoder,
    /// 1000 units per context-encoder direction.
    pub fn full_scale(mode: Mode, src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            mode,
            word_dim: 620,
            enc_hidden: 1000,
            dec_hidden: 1000,
            ctx_enc_hidden: (mode == Mode::LcNmt).then_some(1000),
            attn_hidden: 1000,
            dropout_rate: 0.2,
            src_vocab,
            tgt_vocab,
        }
    }

    /// Small dimensions that train in minutes on one core.
    pub fn desk_scale(mode: Mode, src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            mode,
            word_dim: 16,
            enc_hidden: 32,
            dec_hidden: 32,
            ctx_enc_hidden: (mode == Mode::LcNmt).then_some(32),
            attn_hidden: 32,
            dropout_rate: 0.2,
            src_vocab,
            tgt_vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.word_dim,
            self.enc_hidden,
            self.dec_hidden,
            self.attn_hidden,
            self.src_vocab,
            self.tgt_vocab,
        ];
        if dims.contains(&0) {
            return Err(Error::contract(format!("all model dimensions must be positive: {self:?}")));
        }
        match (self.mode, self.ctx_enc_hidden) {
            (Mode::LcNmt, Some(d)) if d > 0 => {}
            (Mode::Nmt, None) => {}
            _ => {
                return Err(Error::contract(
                    "ctx_enc_hidden must be set (and positive) exactly in lc-nmt mode",
                ))
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::contract(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.tgt_vocab <= EOS {
            return Err(Error::contract("target vocabulary must contain the end-of-sentence id"));
        }
        Ok(())
    }

    fn decoder_input(&self) -> usize {
        self.word_dim + 2 * self.enc_hidden + self.ctx_enc_hidden.map_or(0, |d| 2 * d)
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    src_emb: Embedding,
    tgt_emb: Embedding,
    enc_fwd: GruCell,
    enc_bwd: GruCell,
    ctx_enc: Option<(GruCell, GruCell)>,
    init_w: crate::tape::ParamId,
    init_b: crate::tape::ParamId,
    att: Attention,
    ctx_att: Option<Attention>,
    dec: GruCell,
    out: OutputProjection,
}

impl Layout {
    fn create(config: &ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let c = config;
        let src_emb = Embedding::create(store, "src_emb", c.src_vocab, c.word_dim, rng);
        let tgt_emb = Embedding::create(store, "tgt_emb", c.tgt_vocab, c.word_dim, rng);
        let enc_fwd = GruCell::create(store, "enc_fwd", c.word_dim, c.enc_hidden, rng);
        let enc_bwd = GruCell::create(store, "enc_bwd", c.word_dim, c.enc_hidden, rng);
        let ctx_enc = c.ctx_enc_hidden.map(|d| {
            (
                GruCell::create(store, "ctx_enc_fwd", c.word_dim, d, rng),
                GruCell::create(store, "ctx_enc_bwd", c.word_dim, d, rng),
            )
        });
        let init_w = store.insert(
            "dec_init.w",
            layers::gaussian(rng, &[c.dec_hidden, 2 * c.enc_hidden], INIT_STD),
        );
        let init_b = store.insert("dec_init.b", Tensor::zeros(&[c.dec_hidden]));
        let annot = 2 * c.enc_hidden;
        let att = Attention::create(store, "att", c.attn_hidden, c.word_dim, c.dec_hidden, annot, None, rng);
        let ctx_att = c.ctx_enc_hidden.map(|d| {
            Attention::create(store, "ctx_att", c.attn_hidden, c.word_dim, c.dec_hidden, 2 * d, Some(annot), rng)
        });
        let dec = GruCell::create(store, "dec", c.decoder_input(), c.dec_hidden, rng);
        let out = OutputProjection::create(store, "out", c.dec_hidden, c.tgt_vocab, rng);
        Layout {
            src_emb,
            tgt_emb,
            enc_fwd,
            enc_bwd,
            ctx_enc,
            init_w,
            init_b,
            att,
            ctx_att,
            dec,
            out,
        }
    }

    fn resolve(config: &ModelConfig, store: &ParamStore) -> Result<Self> {
        let missing = |n: &str| Error::Checkpoint(format!("missing parameter {n}"));
        let lc = config.mode == Mode::LcNmt;
        let layout = Layout {
            src_emb: Embedding::resolve(store, "src_emb")?,
            tgt_emb: Embedding::resolve(store, "tgt_emb")?,
            enc_fwd: GruCell::resolve(store, "enc_fwd")?,
            enc_bwd: GruCell::resolve(store, "enc_bwd")?,
            ctx_enc: if lc {
                Some((
                    GruCell::resolve(store, "ctx_enc_fwd")?,
                    GruCell::resolve(store, "ctx_enc_bwd")?,
                ))
            } else {
                None
            },
            init_w: store.id("dec_init.w").ok_or_else(|| missing("dec_init.w"))?,
            init_b: store.id("dec_init.b").ok_or_else(|| missing("dec_init.b"))?,
            att: Attention::resolve(store, "att")?,
            ctx_att: if lc { Some(Attention::resolve(store, "ctx_att")?) } else { None },
            dec: GruCell::resolve(store, "dec")?,
            out: OutputProjection::resolve(store, "out")?,
        };
        let expect = |what: &str, got: usize, want: usize| -> Result<()> {
            if got != want {
                return Err(Error::Checkpoint(format!("{what}: stored {got}, config says {want}")));
            }
            Ok(())
        };
        expect("source vocabulary", layout.src_emb.vocab_size, config.src_vocab)?;
        expect("target vocabulary", layout.out.vocab_size, config.tgt_vocab)?;
        expect("word dim", layout.src_emb.dim, config.word_dim)?;
        expect("encoder width", layout.enc_fwd.hidden_dim, config.enc_hidden)?;
        expect("decoder width", layout.dec.hidden_dim, config.dec_hidden)?;
        expect("decoder input", layout.dec.input_dim, config.decoder_input())?;
        expect("attention width", layout.att.hidden, config.attn_hidden)?;
        if let (Some((f, _)), Some(d)) = (layout.ctx_enc, config.ctx_enc_hidden) {
            expect("context encoder width", f.hidden_dim, d)?;
        }
        if !lc && (store.id("ctx_att.w_emb").is_some() || store.id("ctx_enc_fwd.w").is_some()) {
            return Err(Error::Checkpoint("nmt checkpoint carries context parameters".into()));
        }
        Ok(layout)
    }
}

/// Annotations of the current (and, for LC-NMT, preceding) sentence plus the
/// initial decoder state, all living on one tape.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    pub annotations: Var,
    pub mask: Vec<bool>,
    pub context: Option<EncodedContext>,
    pub z0: Var,
    keys: Var,
}

#[derive(Debug, Clone)]
pub struct EncodedContext {
    pub annotations: Var,
    pub mask: Vec<bool>,
    keys: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub z: Var,
    /// Source vector of the step that produced this state.
    pub s: Option<Var>,
    /// Context vector of the step that produced this state.
    pub c: Option<Var>,
    pub prev: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub state: DecoderState,
    pub log_probs: Var,
    pub attention: Var,
    pub context_attention: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

impl Model {
    /// Fresh model: square recurrent matrices orthogonal, other weights
    /// Gaussian with std 0.01, biases zero.
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layout = Layout::create(&config, &mut params, rng);
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&config, &params)?;
        for (_, name, t) in params.iter() {
            if !t.is_finite() {
                return Err(Error::Numeric(format!("parameter {name} holds non-finite values")));
            }
        }
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    /// Parameter group that carries the context vector into the decoder: the
    /// columns of `dec.w` reading `c`.
    pub fn context_input_columns(&self) -> Option<std::ops::Range<usize>> {
        let d = self.config.ctx_enc_hidden?;
        let start = self.config.word_dim + 2 * self.config.enc_hidden;
        Some(start..start + 2 * d)
    }

    pub fn encode(
        &self,
        tape: &mut Tape<'_>,
        example: &ContextualExample,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<EncodedSource> {
        let l = &self.layout;
        if example.source.is_empty() {
            return Err(Error::contract("source sentence is empty"));
        }
        let annotations =
            layers::bidir_encode(tape, &l.enc_fwd, &l.enc_bwd, &l.src_emb, &example.source, dropout.as_deref_mut())?;
        let mask = vec![true; example.source.len()];
        let keys = l.att.project_keys(tape, annotations)?;

        let context = match l.ctx_enc {
            Some((f, b)) => {
                if example.context.is_empty() {
                    return Err(Error::contract(
                        "lc-nmt needs a context sentence (use the empty-context token at document start)",
                    ));
                }
                let ann = layers::bidir_encode(tape, &f, &b, &l.src_emb, &example.context, dropout)?;
                let att = l.ctx_att.as_ref().expect("context attention exists in lc-nmt");
                Some(EncodedContext {
                    annotations: ann,
                    mask: vec![true; example.context.len()],
                    keys: att.project_keys(tape, ann)?,
                })
            }
            None => None,
        };

        let mean = tape.mean_rows(annotations)?;
        let (w, b) = (tape.param(l.init_w), tape.param(l.init_b));
        let pre = tape.affine(mean, w, b)?;
        let z0 = tape.tanh(pre)?;
        Ok(EncodedSource {
            annotations,
            mask,
            context,
            z0,
            keys,
        })
    }

    pub fn initial_state(&self, enc: &EncodedSource) -> DecoderState {
        DecoderState {
            z: enc.z0,
            s: None,
            c: None,
            prev: BOS,
        }
    }

    /// One decoder transition: main attention, then (LC-NMT) context
    /// attention conditioned on the fresh source vector, then the GRU update
    /// and the distribution over the next target symbol.
    pub fn decoder_step(
        &self,
        tape: &mut Tape<'_>,
        enc: &EncodedSource,
        state: &DecoderState,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<StepOutput> {
        let l = &self.layout;
        let y = l.tgt_emb.lookup(tape, state.prev)?;
        let y = match dropout.as_deref_mut() {
            Some(d) => d.apply(tape, y)?,
            None => y,
        };
        let main = l
            .att
            .attend_keys(tape, y, state.z, enc.keys, enc.annotations, &enc.mask, None)?;
        let (c, ctx_weights) = match (&l.ctx_att, &enc.context) {
            (Some(att), Some(ctx)) => {
                let read = att.attend_keys(tape, y, state.z, ctx.keys, ctx.annotations, &ctx.mask, Some(main.context))?;
                (Some(read.context), Some(read.weights))
            }
            (None, _) => (None, None),
            (Some(_), None) => return Err(Error::contract("lc-nmt step without encoded context")),
        };
        let input = match c {
            Some(c) => tape.concat(&[y, main.context, c])?,
            None => tape.concat(&[y, main.context])?,
        };
        let z = l.dec.step(tape, state.z, input)?;
        let z_out = match dropout {
            Some(d) => d.apply(tape, z)?,
            None => z,
        };
        let log_probs = l.out.log_probs(tape, z_out)?;
        Ok(StepOutput {
            state: DecoderState {
                z,
                s: Some(main.context),
                c,
                prev: state.prev,
            },
            log_probs,
            attention: main.weights,
            context_attention: ctx_weights,
        })
    }

    /// Advances `state` by emitting `token`.
    pub fn advance(&self, out: &StepOutput, token: usize) -> Result<DecoderState> {
        if token >= self.config.tgt_vocab {
            return Err(Error::Vocabulary {
                id: token,
                size: self.config.tgt_vocab,
            });
        }
        Ok(DecoderState {
            prev: token,
            ..out.state
        })
    }

    /// Teacher-forced `Σ log p(y_t | y_<t, X[, X₋₁])` recorded on `tape`;
    /// returns the per-step log-probability nodes.
    pub fn target_log_probs(
        &self,
        tape: &mut Tape<'_>,
        example: &ContextualExample,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Vec<Var>> {
        if example.target.last() != Some(&EOS) {
            return Err(Error::contract("target must be non-empty and end with the end-of-sentence id"));
        }
        let enc = self.encode(tape, example, dropout.as_deref_mut())?;
        self.score_target(tape, &enc, &example.target, dropout)
    }

    /// Teacher-forced scoring of `target` given an already encoded source.
    pub fn score_target(
        &self,
        tape: &mut Tape<'_>,
        enc: &EncodedSource,
        target: &[usize],
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Vec<Var>> {
        let mut state = self.initial_state(enc);
        let mut picks = Vec::with_capacity(target.len());
        for &y in target {
            let out = self.decoder_step(tape, enc, &state, dropout.as_deref_mut())?;
            picks.push(tape.pick(out.log_probs, y)?);
            state = self.advance(&out, y)?;
        }
        Ok(picks)
    }

    pub fn sequence_log_prob(&self, example: &ContextualExample) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let picks = self.target_log_probs(&mut tape, example, None)?;
        Ok(picks.iter().map(|&p| tape.scalar(p)).sum())
    }

    /// Negative log-likelihood of `examples` summed on one tape; dropout is
    /// active when `rng` is given.
    pub fn nll_on_tape(
        &self,
        tape: &mut Tape<'_>,
        examples: &[ContextualExample],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let mut picks = Vec::new();
        match rng {
            Some(rng) => {
                let mut d = Dropout::new(self.config.dropout_rate, rng)?;
                for ex in examples {
                    picks.extend(self.target_log_probs(tape, ex, Some(&mut d))?);
                }
            }
            None => {
                for ex in examples {
                    picks.extend(self.target_log_probs(tape, ex, None)?);
                }
            }
        }
        let total = tape.sum_scalars(&picks)?;
        tape.scale(total, -1.0)
    }
}

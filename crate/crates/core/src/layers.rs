//! Building blocks of the encoder-decoder: embeddings, GRU cells,
//! bidirectional encoding, feedforward attention, output projection and
//! dropout.
//!
//! Each layer is a small handle of [`ParamId`]s into a [`ParamStore`]; the
//! math runs on a [`Tape`] so the same code path serves training and
//! inference.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tape::{ParamId, ParamStore, Tape, Var};
use crate::tensor::Tensor;

/// Standard deviation of the Gaussian used for non-recurrent weights.
pub const INIT_STD: f64 = 0.01;

pub fn gaussian(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("std is positive");
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect())
        .expect("shape and length agree")
}

/// Random `n×n` orthogonal matrix from the QR factorisation of a Gaussian
/// matrix, with column signs fixed so the distribution is uniform.
pub fn orthogonal(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let m = DMatrix::from_fn(n, n, |_, _| normal.sample(rng));
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    // row-major
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| q[(i, j)])
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn create(store: &mut ParamStore, name: &str, vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let table = store.insert(format!("{name}.table"), gaussian(rng, &[vocab_size, dim], INIT_STD));
        Embedding { table, vocab_size, dim }
    }

    pub fn resolve(store: &ParamStore, name: &str) -> Result<Self> {
        let table = lookup(store, &format!("{name}.table"))?;
        let shape = store.get(table).shape();
        Ok(Embedding {
            table,
            vocab_size: shape[0],
            dim: shape[1],
        })
    }

    pub fn lookup(&self, tape: &mut Tape<'_>, id: usize) -> Result<Var> {
        if id >= self.vocab_size {
            return Err(Error::Vocabulary {
                id,
                size: self.vocab_size,
            });
        }
        let t = tape.param(self.table);
        tape.row(t, id)
    }
}

/// GRU cell with gate weights stacked as `[update; reset; candidate]`.
///
/// Parameters: `w: [3d×e]` input weights, `u_gates: [2d×d]` recurrent
/// weights of the update and reset gates, `u_cand: [d×d]` recurrent weights
/// of the candidate, `b: [3d]` biases.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub w: ParamId,
    pub u_gates: ParamId,
    pub u_cand: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn create(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let d = hidden_dim;
        let w = store.insert(format!("{name}.w"), gaussian(rng, &[3 * d, input_dim], INIT_STD));
        let mut gates = orthogonal(rng, d);
        gates.extend(orthogonal(rng, d));
        let u_gates = store.insert(
            format!("{name}.u_gates"),
            Tensor::new(vec![2 * d, d], gates).expect("2d×d"),
        );
        let u_cand = store.insert(
            format!("{name}.u_cand"),
            Tensor::new(vec![d, d], orthogonal(rng, d)).expect("d×d"),
        );
        let b = store.insert(format!("{name}.b"), Tensor::zeros(&[3 * d]));
        GruCell {
            w,
            u_gates,
            u_cand,
            b,
            input_dim,
            hidden_dim,
        }
    }

    pub fn resolve(store: &ParamStore, name: &str) -> Result<Self> {
        let w = lookup(store, &format!("{name}.w"))?;
        let u_gates = lookup(store, &format!("{name}.u_gates"))?;
        let u_cand = lookup(store, &format!("{name}.u_cand"))?;
        let b = lookup(store, &format!("{name}.b"))?;
        let ws = store.get(w).shape();
        let (d, e) = (ws[0] / 3, ws[1]);
        expect_shape(store, u_gates, &[2 * d, d])?;
        expect_shape(store, u_cand, &[d, d])?;
        expect_shape(store, b, &[3 * d])?;
        Ok(GruCell {
            w,
            u_gates,
            u_cand,
            b,
            input_dim: e,
            hidden_dim: d,
        })
    }

    /// One transition: `h' = (1−z)⊙h + z⊙h̃`.
    pub fn step(&self, tape: &mut Tape<'_>, h_prev: Var, x: Var) -> Result<Var> {
        let d = self.hidden_dim;
        if tape.shape(h_prev) != [d] {
            return Err(Error::dim("gru_step", &[d], tape.shape(h_prev)));
        }
        if tape.shape(x) != [self.input_dim] {
            return Err(Error::dim("gru_step", &[self.input_dim], tape.shape(x)));
        }
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        let (ug, uc) = (tape.param(self.u_gates), tape.param(self.u_cand));
        let gx = tape.affine(x, w, b)?;
        let gh = tape.matvec(ug, h_prev)?;
        let gx_zr = tape.slice(gx, 0, 2 * d)?;
        let pre = tape.add(gx_zr, gh)?;
        let zr = tape.sigmoid(pre)?;
        let z = tape.slice(zr, 0, d)?;
        let r = tape.slice(zr, d, d)?;
        let rh = tape.mul(r, h_prev)?;
        let uh = tape.matvec(uc, rh)?;
        let gx_c = tape.slice(gx, 2 * d, d)?;
        let pre_c = tape.add(gx_c, uh)?;
        let cand = tape.tanh(pre_c)?;
        let diff = tape.sub(cand, h_prev)?;
        let upd = tape.mul(z, diff)?;
        tape.add(h_prev, upd)
    }

    /// Value-level convenience wrapper around [`GruCell::step`].
    pub fn step_tensor(&self, store: &ParamStore, h_prev: &Tensor, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(store);
        let h = tape.input(h_prev);
        let x = tape.input(x);
        let out = self.step(&mut tape, h, x)?;
        Ok(tape.tensor(out))
    }
}

/// Runs `fwd` left-to-right and `bwd` right-to-left over the embedded tokens
/// and stacks `[→h_t; ←h_t]` into a `[T×(d_fwd+d_bwd)]` annotation matrix.
pub fn bidir_encode(
    tape: &mut Tape<'_>,
    fwd: &GruCell,
    bwd: &GruCell,
    emb: &Embedding,
    tokens: &[usize],
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::contract("cannot encode an empty sequence"));
    }
    let mut inputs = Vec::with_capacity(tokens.len());
    for &id in tokens {
        let e = emb.lookup(tape, id)?;
        let e = match dropout.as_deref_mut() {
            Some(d) => d.apply(tape, e)?,
            None => e,
        };
        inputs.push(e);
    }
    let h0 = tape.constant_vec(vec![0.0; fwd.hidden_dim]);
    let mut forward = Vec::with_capacity(tokens.len());
    let mut h = h0;
    for &x in &inputs {
        h = fwd.step(tape, h, x)?;
        forward.push(h);
    }
    let h0 = tape.constant_vec(vec![0.0; bwd.hidden_dim]);
    let mut backward = vec![h0; tokens.len()];
    let mut h = h0;
    for (t, &x) in inputs.iter().enumerate().rev() {
        h = bwd.step(tape, h, x)?;
        backward[t] = h;
    }
    let rows = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect::<Result<Vec<_>>>()?;
    tape.stack_rows(&rows)
}

/// One-hidden-layer tanh feedforward scorer.
///
/// `score_t = vᵀ tanh(W_e ŷ + W_s z + W_h h_t [+ W_x extra] + b) + v_b`.
/// The optional `extra` input is the source vector fed to the context
/// attention.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub w_emb: ParamId,
    pub w_state: ParamId,
    pub w_annot: ParamId,
    pub w_extra: Option<ParamId>,
    pub b: ParamId,
    pub v: ParamId,
    pub v_bias: ParamId,
    pub hidden: usize,
}

/// Output of one attention read.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub weights: Var,
    pub context: Var,
}

impl Attention {
    #[allow(clippy::too_many_arguments)]
    pub fn create(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        emb_dim: usize,
        state_dim: usize,
        annot_dim: usize,
        extra_dim: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        let w_emb = store.insert(format!("{name}.w_emb"), gaussian(rng, &[hidden, emb_dim], INIT_STD));
        let w_state = store.insert(format!("{name}.w_state"), gaussian(rng, &[hidden, state_dim], INIT_STD));
        let w_annot = store.insert(format!("{name}.w_annot"), gaussian(rng, &[hidden, annot_dim], INIT_STD));
        let w_extra =
            extra_dim.map(|k| store.insert(format!("{name}.w_extra"), gaussian(rng, &[hidden, k], INIT_STD)));
        let b = store.insert(format!("{name}.b"), Tensor::zeros(&[hidden]));
        let v = store.insert(format!("{name}.v"), gaussian(rng, &[hidden], INIT_STD));
        let v_bias = store.insert(format!("{name}.v_bias"), Tensor::zeros(&[1]));
        Attention {
            w_emb,
            w_state,
            w_annot,
            w_extra,
            b,
            v,
            v_bias,
            hidden,
        }
    }

    pub fn resolve(store: &ParamStore, name: &str) -> Result<Self> {
        let w_emb = lookup(store, &format!("{name}.w_emb"))?;
        let hidden = store.get(w_emb).shape()[0];
        Ok(Attention {
            w_emb,
            w_state: lookup(store, &format!("{name}.w_state"))?,
            w_annot: lookup(store, &format!("{name}.w_annot"))?,
            w_extra: store.id(&format!("{name}.w_extra")),
            b: lookup(store, &format!("{name}.b"))?,
            v: lookup(store, &format!("{name}.v"))?,
            v_bias: lookup(store, &format!("{name}.v_bias"))?,
            hidden,
        })
    }

    pub fn is_context_variant(&self) -> bool {
        self.w_extra.is_some()
    }

    /// Projects all annotations once per sentence: `H·W_hᵀ`, shape `[T×a]`.
    pub fn project_keys(&self, tape: &mut Tape<'_>, annotations: Var) -> Result<Var> {
        let w = tape.param(self.w_annot);
        tape.matmul_t(annotations, w)
    }

    /// Attention read with keys precomputed by [`Attention::project_keys`].
    #[allow(clippy::too_many_arguments)]
    pub fn attend_keys(
        &self,
        tape: &mut Tape<'_>,
        y_prev_emb: Var,
        z_prev: Var,
        keys: Var,
        annotations: Var,
        mask: &[bool],
        extra: Option<Var>,
    ) -> Result<Attended> {
        let (w_emb, b) = (tape.param(self.w_emb), tape.param(self.b));
        let mut q = tape.affine(y_prev_emb, w_emb, b)?;
        let w_state = tape.param(self.w_state);
        let qs = tape.matvec(w_state, z_prev)?;
        q = tape.add(q, qs)?;
        match (self.w_extra, extra) {
            (Some(wx), Some(x)) => {
                let wx = tape.param(wx);
                let qx = tape.matvec(wx, x)?;
                q = tape.add(q, qx)?;
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(Error::contract(
                    "context attention needs the source vector as extra input",
                ))
            }
            (None, Some(_)) => {
                return Err(Error::contract(
                    "plain attention does not take an extra input",
                ))
            }
        }
        let pre = tape.add_row_broadcast(keys, q)?;
        let hidden = tape.tanh(pre)?;
        let v = tape.param(self.v);
        let raw = tape.matvec(hidden, v)?;
        let vb = tape.param(self.v_bias);
        let scores = tape.add_scalar(raw, vb)?;
        let weights = tape.softmax_masked(scores, mask)?;
        let context = tape.vecmat(weights, annotations)?;
        Ok(Attended { weights, context })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn attend(
        &self,
        tape: &mut Tape<'_>,
        y_prev_emb: Var,
        z_prev: Var,
        annotations: Var,
        mask: &[bool],
        extra: Option<Var>,
    ) -> Result<Attended> {
        let keys = self.project_keys(tape, annotations)?;
        self.attend_keys(tape, y_prev_emb, z_prev, keys, annotations, mask, extra)
    }
}

/// Maps a decoder state to target-vocabulary log-probabilities.
#[derive(Debug, Clone, Copy)]
pub struct OutputProjection {
    pub w: ParamId,
    pub b: ParamId,
    pub vocab_size: usize,
}

impl OutputProjection {
    pub fn create(store: &mut ParamStore, name: &str, state_dim: usize, vocab_size: usize, rng: &mut impl Rng) -> Self {
        let w = store.insert(format!("{name}.w"), gaussian(rng, &[vocab_size, state_dim], INIT_STD));
        let b = store.insert(format!("{name}.b"), Tensor::zeros(&[vocab_size]));
        OutputProjection { w, b, vocab_size }
    }

    pub fn resolve(store: &ParamStore, name: &str) -> Result<Self> {
        let w = lookup(store, &format!("{name}.w"))?;
        let b = lookup(store, &format!("{name}.b"))?;
        let vocab_size = store.get(w).shape()[0];
        expect_shape(store, b, &[vocab_size])?;
        Ok(OutputProjection { w, b, vocab_size })
    }

    pub fn log_probs(&self, tape: &mut Tape<'_>, z: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        let logits = tape.affine(z, w, b)?;
        tape.log_softmax(logits)
    }
}

/// Inverted dropout driven by a caller-owned random stream.
pub struct Dropout<'r> {
    rate: f64,
    rng: &'r mut dyn rand::RngCore,
}

impl<'r> Dropout<'r> {
    pub fn new(rate: f64, rng: &'r mut dyn rand::RngCore) -> Result<Self> {
        check_rate(rate)?;
        Ok(Dropout { rate, rng })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn mask(&mut self, n: usize) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.rate);
        (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }

    pub fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let mask = self.mask(tape.value(x).len());
        tape.mul_const(x, mask)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Value-level dropout: identity outside training, inverted dropout inside.
pub fn dropout_apply(x: &Tensor, rate: f64, rng: &mut dyn rand::RngCore, training: bool) -> Result<Tensor> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let mut d = Dropout::new(rate, rng)?;
    let mask = d.mask(x.len());
    let values = x.values().iter().zip(mask).map(|(v, m)| v * m).collect();
    Tensor::new(x.shape().to_vec(), values)
}

fn lookup(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
}

fn expect_shape(store: &ParamStore, id: ParamId, shape: &[usize]) -> Result<()> {
    let got = store.get(id).shape();
    if got != shape {
        return Err(Error::dim("parameter", shape, got));
    }
    Ok(())
}

//! Dense row-major `f64` tensors and the forward math shared by the tape.
//!
//! Everything here is value-level: no gradient bookkeeping happens in this
//! module. The [`crate::tape`] module records these same computations and
//! adds their local derivative rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::dim("tensor", &shape, &[values.len()]));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        assert_eq!(delta.len(), self.values.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(g, d)| *g += d),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `W·x + b` for `W: [n×m]`, `x: [m]`, `b: [n]`.
    pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        if w.shape.len() != 2 || x.shape.len() != 1 || w.shape[1] != x.shape[0] {
            return Err(Error::dim("affine", &w.shape, &x.shape));
        }
        if b.shape != [w.shape[0]] {
            return Err(Error::dim("affine", &w.shape, &b.shape));
        }
        let mut out = b.values.clone();
        matvec_acc(&w.values, w.shape[0], w.shape[1], &x.values, &mut out);
        Ok(Tensor::vector(out))
    }

    pub fn elementwise(&self, f: Activation) -> Result<Tensor> {
        if f == Activation::Log {
            if let Some(bad) = self.values.iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f.apply(v)).collect(),
            grad: None,
        })
    }

    pub fn softmax_masked(&self, mask: &[bool]) -> Result<Tensor> {
        if self.shape.len() != 1 || mask.len() != self.values.len() {
            return Err(Error::dim("softmax_masked", &self.shape, &[mask.len()]));
        }
        Ok(Tensor::vector(softmax_masked(&self.values, mask)?))
    }

    pub fn log_softmax(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: log_softmax(&self.values),
            grad: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Exp,
    Log,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
            Activation::Exp => v.exp(),
            Activation::Log => v.ln(),
        }
    }

    /// Derivative expressed through the input `x` and output `y = f(x)`.
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Exp => y,
            Activation::Log => 1.0 / x,
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `out += W·x` with `W` stored row-major as `rows × cols`.
pub(crate) fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

pub(crate) fn softmax_masked(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY && !mask.iter().any(|&m| m) {
        return Err(Error::EmptySupport);
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    Ok(out)
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_invariant_is_enforced() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn affine_identity_and_arithmetic() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let y = Tensor::affine(&x, &Tensor::identity(2), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.values(), &[1.0, 2.0]);

        let x = Tensor::vector(vec![1.0, 1.0]);
        let w = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let y = Tensor::affine(&x, &w, &Tensor::vector(vec![-2.0])).unwrap();
        assert_eq!(y.values(), &[0.0]);
    }

    #[test]
    fn affine_matches_elementwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = Tensor::affine(
            &Tensor::vector(x.clone()),
            &Tensor::matrix(3, 4, w.clone()).unwrap(),
            &Tensor::vector(b.clone()),
        )
        .unwrap();
        for i in 0..3 {
            let mut expect = b[i];
            for j in 0..4 {
                expect += w[i * 4 + j] * x[j];
            }
            assert!((got.values()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_reports_both_shapes() {
        let err = Tensor::affine(
            &Tensor::zeros(&[3]),
            &Tensor::zeros(&[2, 2]),
            &Tensor::zeros(&[2]),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn activations() {
        let z = Tensor::vector(vec![0.0]);
        assert_eq!(z.elementwise(Activation::Tanh).unwrap().values(), &[0.0]);
        assert_eq!(z.elementwise(Activation::Sigmoid).unwrap().values(), &[0.5]);
        let e = Tensor::vector(vec![1.0]).elementwise(Activation::Exp).unwrap();
        assert!((e.values()[0] - std::f64::consts::E).abs() < 1e-9);
        assert!(matches!(
            Tensor::vector(vec![1.0, 0.0]).elementwise(Activation::Log),
            Err(Error::Domain { .. })
        ));
        assert!(Tensor::vector(vec![-1.0])
            .elementwise(Activation::Log)
            .is_err());
    }

    #[test]
    fn softmax_examples() {
        let s = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(s.softmax_masked(&[true, true]).unwrap().values(), &[0.5, 0.5]);
        let s = Tensor::vector(vec![5.0, 100.0]);
        assert_eq!(s.softmax_masked(&[true, false]).unwrap().values(), &[1.0, 0.0]);

        // direct formula with max subtraction
        let raw = [1.0f64, 2.0, 3.0];
        let denom: f64 = raw.iter().map(|v| (v - 3.0).exp()).sum();
        let got = Tensor::vector(raw.to_vec())
            .softmax_masked(&[true; 3])
            .unwrap();
        for (g, r) in got.values().iter().zip(raw) {
            assert!((g - (r - 3.0).exp() / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_empty_support() {
        let s = Tensor::vector(vec![1.0, 2.0]);
        assert!(matches!(
            s.softmax_masked(&[false, false]),
            Err(Error::EmptySupport)
        ));
    }

    proptest::proptest! {
        #[test]
        fn softmax_is_a_distribution_and_shift_invariant(
            scores in proptest::collection::vec(-30.0f64..30.0, 1..12),
            mask_bits in proptest::collection::vec(proptest::bool::ANY, 12),
            shift in -50.0f64..50.0,
        ) {
            let mut mask = mask_bits[..scores.len()].to_vec();
            mask[0] = true;
            let p = softmax_masked(&scores, &mask).unwrap();
            let sum: f64 = p.iter().sum();
            proptest::prop_assert!((sum - 1.0).abs() < 1e-9);
            for (v, m) in p.iter().zip(&mask) {
                proptest::prop_assert!(*v >= 0.0);
                if !m { proptest::prop_assert_eq!(*v, 0.0); }
            }
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let q = softmax_masked(&shifted, &mask).unwrap();
            for (a, b) in p.iter().zip(&q) {
                proptest::prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

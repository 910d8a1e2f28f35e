//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] borrows a [`ParamStore`] and records every primitive applied
//! during a forward pass. Nodes are appended in evaluation order, which is a
//! topological order of the computation, so [`Tape::backward`] simply walks
//! the node list in reverse. Parameters enter the tape once per tape no
//! matter how many times they are used; their gradient therefore sums every
//! use, which is what backpropagation-through-time needs when the same GRU
//! weights are applied at every step.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{self, Activation, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered parameter collection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(move |id| self.get_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn empty(num_params: usize) -> Self {
        Gradients {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Vec<f64>)> {
        self.grads
            .iter_mut()
            .enumerate()
            .filter_map(|(i, g)| g.as_mut().map(|g| (ParamId(i), g)))
    }

    /// Elementwise sum with another gradient set over the same store.
    pub fn add(&mut self, other: &Gradients) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.iter_mut().zip(t).for_each(|(a, b)| *a += b),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (_, g) in self.iter_mut() {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.iter()
            .flat_map(|(_, g)| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Writes these gradients into the parameters' grad slots, adding to
    /// whatever is already there.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in self.iter() {
            store.get_mut(id).accumulate_grad(g);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Affine { x: Var, w: Var, b: Var },
    MatVec { w: Var, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar { x: Var, s: Var },
    Act { x: Var, f: Activation },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Row { table: Var, id: usize },
    StackRows(Vec<Var>),
    MatMulT { x: Var, w: Var },
    AddRowBroadcast { m: Var, q: Var },
    SoftmaxMasked { x: Var },
    LogSoftmax { x: Var },
    VecMat { w: Var, m: Var },
    MeanRows { m: Var },
    Pick { x: Var, idx: usize },
    SumScalars(Vec<Var>),
    SumAll { x: Var },
    Scale { x: Var, c: f64 },
    MulConst { x: Var, c: Vec<f64> },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    // `None` for parameter leaves, whose values live in the store.
    value: Option<Vec<f64>>,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(val), _) => val,
            (None, Op::Param(id)) => self.params.get(*id).values(),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
            .expect("tape nodes always hold consistent shapes")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            op,
            shape,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; receives no gradient that is reported anywhere.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(Op::Input, t.shape().to_vec(), t.values().to_vec())
    }

    pub fn constant_vec(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(Op::Input, vec![n], values)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            shape: self.params.get(id).shape().to_vec(),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    fn vec_len(&self, v: Var, op: &'static str) -> Result<usize> {
        match self.shape(v) {
            [n] => Ok(*n),
            s => Err(Error::dim(op, s, &[])),
        }
    }

    fn mat_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(op, s, &[])),
        }
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, m) = self.mat_dims(w, "affine")?;
        if self.shape(x) != [m] {
            return Err(Error::dim("affine", self.shape(w), self.shape(x)));
        }
        if self.shape(b) != [n] {
            return Err(Error::dim("affine", self.shape(w), self.shape(b)));
        }
        let mut out = self.value(b).to_vec();
        tensor::matvec_acc(self.value(w), n, m, self.value(x), &mut out);
        Ok(self.push(Op::Affine { x, w, b }, vec![n], out))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (n, m) = self.mat_dims(w, "matvec")?;
        if self.shape(x) != [m] {
            return Err(Error::dim("matvec", self.shape(w), self.shape(x)));
        }
        let mut out = vec![0.0; n];
        tensor::matvec_acc(self.value(w), n, m, self.value(x), &mut out);
        Ok(self.push(Op::MatVec { w, x }, vec![n], out))
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let node = match op {
            "add" => Op::Add(a, b),
            "sub" => Op::Sub(a, b),
            _ => Op::Mul(a, b),
        };
        Ok(self.push(node, shape, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y)
    }

    /// Adds a one-element tensor to every entry of `x`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.shape(s) != [1] {
            return Err(Error::dim("add_scalar", self.shape(x), self.shape(s)));
        }
        let c = self.scalar(s);
        let out = self.value(x).iter().map(|v| v + c).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::AddScalar { x, s }, shape, out))
    }

    pub fn act(&mut self, x: Var, f: Activation) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let t = Tensor::new(shape.clone(), self.value(x).to_vec())?.elementwise(f)?;
        Ok(self.push(Op::Act { x, f }, shape, t.into_values()))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.act(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.act(x, Activation::Sigmoid)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            self.vec_len(p, "concat")?;
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        Ok(self.push(Op::Concat(parts.to_vec()), vec![n], out))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.vec_len(x, "slice")?;
        if start + len > n || len == 0 {
            return Err(Error::dim("slice", &[n], &[start, len]));
        }
        let out = self.value(x)[start..start + len].to_vec();
        Ok(self.push(Op::Slice { x, start }, vec![len], out))
    }

    /// Row `id` of a `[rows × dim]` table, as a `[dim]` vector.
    pub fn row(&mut self, table: Var, id: usize) -> Result<Var> {
        let (rows, dim) = self.mat_dims(table, "row")?;
        if id >= rows {
            return Err(Error::Vocabulary { id, size: rows });
        }
        let out = self.value(table)[id * dim..(id + 1) * dim].to_vec();
        Ok(self.push(Op::Row { table, id }, vec![dim], out))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| Error::contract("stack_rows needs at least one row"))?;
        let k = self.vec_len(*first, "stack_rows")?;
        let mut out = Vec::with_capacity(k * rows.len());
        for &r in rows {
            if self.shape(r) != [k] {
                return Err(Error::dim("stack_rows", &[k], self.shape(r)));
            }
            out.extend_from_slice(self.value(r));
        }
        Ok(self.push(Op::StackRows(rows.to_vec()), vec![rows.len(), k], out))
    }

    /// `X·Wᵀ` for `X: [T×k]`, `W: [a×k]`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (t, k) = self.mat_dims(x, "matmul_t")?;
        let (a, k2) = self.mat_dims(w, "matmul_t")?;
        if k != k2 {
            return Err(Error::dim("matmul_t", self.shape(x), self.shape(w)));
        }
        let mut out = vec![0.0; t * a];
        let (xv, wv) = (self.value(x), self.value(w));
        for (row, o) in xv.chunks_exact(k).zip(out.chunks_exact_mut(a)) {
            tensor::matvec_acc(wv, a, k, row, o);
        }
        Ok(self.push(Op::MatMulT { x, w }, vec![t, a], out))
    }

    pub fn add_row_broadcast(&mut self, m: Var, q: Var) -> Result<Var> {
        let (t, a) = self.mat_dims(m, "add_row_broadcast")?;
        if self.shape(q) != [a] {
            return Err(Error::dim("add_row_broadcast", self.shape(m), self.shape(q)));
        }
        let qv = self.value(q);
        let out = self
            .value(m)
            .chunks_exact(a)
            .flat_map(|row| row.iter().zip(qv).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(Op::AddRowBroadcast { m, q }, vec![t, a], out))
    }

    pub fn softmax_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let n = self.vec_len(x, "softmax_masked")?;
        if mask.len() != n {
            return Err(Error::dim("softmax_masked", &[n], &[mask.len()]));
        }
        let out = tensor::softmax_masked(self.value(x), mask)?;
        Ok(self.push(Op::SoftmaxMasked { x }, vec![n], out))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.vec_len(x, "log_softmax")?;
        let out = tensor::log_softmax(self.value(x));
        Ok(self.push(Op::LogSoftmax { x }, vec![n], out))
    }

    /// `wᵀ·M` for `w: [T]`, `M: [T×k]`.
    pub fn vecmat(&mut self, w: Var, m: Var) -> Result<Var> {
        let t = self.vec_len(w, "vecmat")?;
        let (t2, k) = self.mat_dims(m, "vecmat")?;
        if t != t2 {
            return Err(Error::dim("vecmat", self.shape(w), self.shape(m)));
        }
        let mut out = vec![0.0; k];
        for (&wt, row) in self.value(w).iter().zip(self.value(m).chunks_exact(k)) {
            out.iter_mut().zip(row).for_each(|(o, r)| *o += wt * r);
        }
        Ok(self.push(Op::VecMat { w, m }, vec![k], out))
    }

    pub fn mean_rows(&mut self, m: Var) -> Result<Var> {
        let (t, k) = self.mat_dims(m, "mean_rows")?;
        let mut out = vec![0.0; k];
        for row in self.value(m).chunks_exact(k) {
            out.iter_mut().zip(row).for_each(|(o, r)| *o += r);
        }
        out.iter_mut().for_each(|o| *o /= t as f64);
        Ok(self.push(Op::MeanRows { m }, vec![k], out))
    }

    pub fn pick(&mut self, x: Var, idx: usize) -> Result<Var> {
        let n = self.vec_len(x, "pick")?;
        if idx >= n {
            return Err(Error::Vocabulary { id: idx, size: n });
        }
        let out = vec![self.value(x)[idx]];
        Ok(self.push(Op::Pick { x, idx }, vec![1], out))
    }

    pub fn sum_scalars(&mut self, xs: &[Var]) -> Result<Var> {
        let mut acc = 0.0;
        for &x in xs {
            if self.shape(x) != [1] {
                return Err(Error::dim("sum_scalars", self.shape(x), &[1]));
            }
            acc += self.scalar(x);
        }
        Ok(self.push(Op::SumScalars(xs.to_vec()), vec![1], vec![acc]))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        Ok(self.push(Op::SumAll { x }, vec![1], vec![s]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Scale { x, c }, shape, out))
    }

    /// Elementwise product with a constant (non-differentiated) vector.
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::dim("mul_const", self.shape(x), &[c.len()]));
        }
        let out = self.value(x).iter().zip(&c).map(|(a, b)| a * b).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::MulConst { x, c }, shape, out))
    }

    /// Propagates `∂output/∂·` back through every recorded node and returns
    /// the gradients of all parameters that influenced `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.shape(output) != [1] {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Param(_) | Op::Input) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = node.value.as_deref().expect("non-leaf nodes own a value");
            self.propagate(&node.op, &g, y, &mut grads);
        }

        let mut out = Gradients::empty(self.params.len());
        for (&id, &v) in &self.param_nodes {
            out.grads[id.0] = grads[v.0].take();
        }
        Ok(out)
    }

    fn propagate(&self, op: &Op, g: &[f64], y: &[f64], grads: &mut [Option<Vec<f64>>]) {
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let n = self.value(v).len();
                grads[v.0].get_or_insert_with(|| vec![0.0; n])
            }};
        }
        match op {
            Op::Input | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                acc!(*b).iter_mut().zip(g).for_each(|(d, g)| *d += g);
                self.matvec_backward(*w, *x, g, grads);
            }
            Op::MatVec { w, x } => self.matvec_backward(*w, *x, g, grads),
            Op::Add(a, b) => {
                acc!(*a).iter_mut().zip(g).for_each(|(d, g)| *d += g);
                acc!(*b).iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
            Op::Sub(a, b) => {
                acc!(*a).iter_mut().zip(g).for_each(|(d, g)| *d += g);
                acc!(*b).iter_mut().zip(g).for_each(|(d, g)| *d -= g);
            }
            Op::Mul(a, b) => {
                let bv = self.value(*b).to_vec();
                let av = self.value(*a).to_vec();
                acc!(*a)
                    .iter_mut()
                    .zip(g.iter().zip(&bv))
                    .for_each(|(d, (g, b))| *d += g * b);
                acc!(*b)
                    .iter_mut()
                    .zip(g.iter().zip(&av))
                    .for_each(|(d, (g, a))| *d += g * a);
            }
            Op::AddScalar { x, s } => {
                acc!(*x).iter_mut().zip(g).for_each(|(d, g)| *d += g);
                acc!(*s)[0] += g.iter().sum::<f64>();
            }
            Op::Act { x, f } => {
                let xv = self.value(*x);
                let d = grads[x.0].get_or_insert_with(|| vec![0.0; xv.len()]);
                for i in 0..xv.len() {
                    d[i] += g[i] * f.derivative(xv[i], y[i]);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc!(p)
                        .iter_mut()
                        .zip(&g[off..off + n])
                        .for_each(|(d, g)| *d += g);
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                acc!(*x)[*start..*start + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, g)| *d += g);
            }
            Op::Row { table, id } => {
                let dim = g.len();
                acc!(*table)[id * dim..(id + 1) * dim]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, g)| *d += g);
            }
            Op::StackRows(rows) => {
                let k = self.value(rows[0]).len();
                for (&r, gr) in rows.iter().zip(g.chunks_exact(k)) {
                    acc!(r).iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                }
            }
            Op::MatMulT { x, w } => {
                let (_, k) = (self.shape(*x)[0], self.shape(*x)[1]);
                let a = self.shape(*w)[0];
                let xv = self.value(*x);
                let wv = self.value(*w);
                {
                    let dx = grads[x.0].get_or_insert_with(|| vec![0.0; xv.len()]);
                    for (grow, dxrow) in g.chunks_exact(a).zip(dx.chunks_exact_mut(k)) {
                        for (gj, wrow) in grow.iter().zip(wv.chunks_exact(k)) {
                            if *gj != 0.0 {
                                dxrow.iter_mut().zip(wrow).for_each(|(d, w)| *d += gj * w);
                            }
                        }
                    }
                }
                let dw = grads[w.0].get_or_insert_with(|| vec![0.0; wv.len()]);
                for (grow, xrow) in g.chunks_exact(a).zip(xv.chunks_exact(k)) {
                    for (gj, dwrow) in grow.iter().zip(dw.chunks_exact_mut(k)) {
                        if *gj != 0.0 {
                            dwrow.iter_mut().zip(xrow).for_each(|(d, x)| *d += gj * x);
                        }
                    }
                }
            }
            Op::AddRowBroadcast { m, q } => {
                let a = self.value(*q).len();
                acc!(*m).iter_mut().zip(g).for_each(|(d, g)| *d += g);
                let dq = acc!(*q);
                for row in g.chunks_exact(a) {
                    dq.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
            }
            Op::SoftmaxMasked { x } => {
                let dot: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
                acc!(*x)
                    .iter_mut()
                    .zip(y.iter().zip(g))
                    .for_each(|(d, (y, g))| *d += y * (g - dot));
            }
            Op::LogSoftmax { x } => {
                let gsum: f64 = g.iter().sum();
                acc!(*x)
                    .iter_mut()
                    .zip(y.iter().zip(g))
                    .for_each(|(d, (y, g))| *d += g - y.exp() * gsum);
            }
            Op::VecMat { w, m } => {
                let k = g.len();
                let wv = self.value(*w);
                let mv = self.value(*m);
                {
                    let dw = grads[w.0].get_or_insert_with(|| vec![0.0; wv.len()]);
                    for (d, row) in dw.iter_mut().zip(mv.chunks_exact(k)) {
                        *d += row.iter().zip(g).map(|(r, g)| r * g).sum::<f64>();
                    }
                }
                let dm = grads[m.0].get_or_insert_with(|| vec![0.0; mv.len()]);
                for (&wt, drow) in wv.iter().zip(dm.chunks_exact_mut(k)) {
                    drow.iter_mut().zip(g).for_each(|(d, g)| *d += wt * g);
                }
            }
            Op::MeanRows { m } => {
                let t = self.shape(*m)[0] as f64;
                let k = g.len();
                for drow in acc!(*m).chunks_exact_mut(k) {
                    drow.iter_mut().zip(g).for_each(|(d, g)| *d += g / t);
                }
            }
            Op::Pick { x, idx } => acc!(*x)[*idx] += g[0],
            Op::SumScalars(xs) => {
                for &x in xs {
                    acc!(x)[0] += g[0];
                }
            }
            Op::SumAll { x } => acc!(*x).iter_mut().for_each(|d| *d += g[0]),
            Op::Scale { x, c } => acc!(*x).iter_mut().zip(g).for_each(|(d, g)| *d += c * g),
            Op::MulConst { x, c } => acc!(*x)
                .iter_mut()
                .zip(g.iter().zip(c))
                .for_each(|(d, (g, c))| *d += g * c),
        }
    }

    fn matvec_backward(&self, w: Var, x: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let xv = self.value(x);
        let wv = self.value(w);
        let m = xv.len();
        {
            let dx = grads[x.0].get_or_insert_with(|| vec![0.0; m]);
            for (gi, row) in g.iter().zip(wv.chunks_exact(m)) {
                if *gi != 0.0 {
                    dx.iter_mut().zip(row).for_each(|(d, w)| *d += gi * w);
                }
            }
        }
        let dw = grads[w.0].get_or_insert_with(|| vec![0.0; wv.len()]);
        for (gi, drow) in g.iter().zip(dw.chunks_exact_mut(m)) {
            if *gi != 0.0 {
                drow.iter_mut().zip(xv).for_each(|(d, x)| *d += gi * x);
            }
        }
    }
}

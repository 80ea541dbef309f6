//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive as a node holding its forward value and
//! parent handles. Nodes are appended in evaluation order, so parents always
//! precede children and a single reverse sweep accumulates gradients.
//! Tapes are cheap to build and are meant to be discarded after each
//! forward/backward pass.

use crate::error::{Error, Result};
use crate::numcore::tensor::{gemm, Tensor};

/// Lower/upper clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    MulConst(Var, Tensor),
    Relu(Var),
    Sigmoid(Var),
    RowNorms(Var),
    MulRows(Var, Var),
    ScaleRows(Var, Vec<f64>),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    Take(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    Bce(Var, Tensor),
    SoftmaxCe {
        logits: Var,
        classes: Vec<usize>,
        weights: Vec<f64>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, or zeros shaped like `like` when `v`
    /// did not influence the root.
    pub fn wrt(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!(
                "{} produced a non-finite value",
                op_name(&op)
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(Error::dim(format!(
                "matmul of {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        gemm(av.data(), false, bv.data(), false, m, k, n, &mut out);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b))
    }

    /// `x + b` with `b` broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.shape().len() != 1 || bv.len() != xv.cols() {
            return Err(Error::dim(format!(
                "bias {:?} against input {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let c = xv.cols();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        self.push(out, Op::AddBias(x, b))
    }

    /// `x · W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        self.push(out, Op::Div(a, b))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    /// Multiplication by a scalar node (both operands differentiable).
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if !sv.is_scalar() {
            return Err(Error::dim(format!(
                "mul_scalar expects a scalar, got {:?}",
                sv.shape()
            )));
        }
        let s0 = sv.item();
        let out = self.value(a).map(|x| x * s0);
        self.push(out, Op::MulScalar(a, s))
    }

    /// Elementwise multiplication by a constant tensor of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let out = self.value(a).zip_map(&c, |x, y| x * y)?;
        self.push(out, Op::MulConst(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Euclidean norm of each row; a vector counts as a single row.
    pub fn row_norms(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let norms: Vec<f64> = (0..av.rows())
            .map(|i| av.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out = Tensor::vector(norms)?;
        self.push(out, Op::RowNorms(a))
    }

    /// Euclidean norm of a vector, as a scalar node.
    pub fn l2_norm(&mut self, v: Var) -> Result<Var> {
        if self.value(v).shape().len() != 1 {
            return Err(Error::dim(format!(
                "l2_norm expects a vector, got {:?}",
                self.value(v).shape()
            )));
        }
        self.row_norms(v)
    }

    /// Scales row `i` of `x` by `s[i]`, with `s` a node.
    pub fn mul_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.shape().len() != 1 || sv.len() != xv.rows() {
            return Err(Error::dim(format!(
                "mul_rows of {:?} by {:?}",
                xv.shape(),
                sv.shape()
            )));
        }
        let out = scale_rows(xv, sv.data());
        self.push(out, Op::MulRows(x, s))
    }

    /// Scales row `i` of `x` by the constant `coeffs[i]`.
    pub fn scale_rows(&mut self, x: Var, coeffs: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if coeffs.len() != xv.rows() {
            return Err(Error::dim(format!(
                "scale_rows: {} coefficients for {} rows",
                coeffs.len(),
                xv.rows()
            )));
        }
        let out = scale_rows(xv, &coeffs);
        self.push(out, Op::ScaleRows(x, coeffs))
    }

    /// Selects rows `idx` of a matrix (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::dim("gather_rows expects a matrix"));
        }
        let (n, c) = (xv.rows(), xv.cols());
        if idx.is_empty() {
            return Err(Error::dim("gather_rows with no indices"));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            if i >= n {
                return Err(Error::dim(format!("row index {i} out of range {n}")));
            }
            out.extend_from_slice(xv.row(i));
        }
        let t = Tensor::matrix(idx.len(), c, out)?;
        self.push(t, Op::GatherRows(x, idx))
    }

    /// Places row `j` of `x` at row `idx[j]` of a zero `[n, cols]` matrix.
    pub fn scatter_rows(&mut self, x: Var, idx: Vec<usize>, n: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || idx.len() != xv.rows() {
            return Err(Error::dim("scatter_rows index count must equal row count"));
        }
        let c = xv.cols();
        let mut out = vec![0.0; n * c];
        for (j, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(Error::dim(format!("row index {i} out of range {n}")));
            }
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(xv.row(j)) {
                *o += v;
            }
        }
        let t = Tensor::matrix(n, c, out)?;
        self.push(t, Op::ScatterRows(x, idx))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_rows of nothing"))?;
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.shape().len() != 2 || pv.cols() != c {
                return Err(Error::dim(format!(
                    "concat_rows: {:?} does not have {c} columns",
                    pv.shape()
                )));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let t = Tensor::matrix(rows, c, data)?;
        self.push(t, Op::ConcatRows(parts.to_vec()))
    }

    /// Picks flat elements `idx` of `x` into a tensor of `shape`.
    pub fn take(&mut self, x: Var, idx: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(idx.len());
        for &i in &idx {
            data.push(
                *xv.data()
                    .get(i)
                    .ok_or_else(|| Error::dim(format!("take index {i} out of range")))?,
            );
        }
        let t = Tensor::new(shape.to_vec(), data)?;
        self.push(t, Op::Take(x, idx))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        self.push(t, Op::Reshape(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Binary cross-entropy between probabilities `p` and soft targets `t`:
    /// the mean over rows of the per-row sum over columns.
    ///
    /// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`; clamped
    /// entries pass no gradient.
    pub fn bce(&mut self, p: Var, targets: &Tensor) -> Result<Var> {
        let pv = self.value(p);
        pv.expect_same_shape(targets, "bce")?;
        if let Some(bad) = targets.data().iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Domain(format!("bce target {bad} outside [0, 1]")));
        }
        let n = pv.rows() as f64;
        let total: f64 = pv
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&p, &t)| bce_term(p, t))
            .sum();
        self.push(Tensor::scalar(total / n), Op::Bce(p, targets.clone()))
    }

    /// Weighted softmax cross-entropy: `Σ w_i CE_i / Σ w_i` over rows of `logits`.
    pub fn softmax_ce(
        &mut self,
        logits: Var,
        classes: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<Var> {
        let lv = self.value(logits);
        let (n, g) = (lv.rows(), lv.cols());
        if classes.len() != n || weights.len() != n {
            return Err(Error::dim("softmax_ce: one class and weight per row"));
        }
        let wsum: f64 = weights.iter().sum();
        if wsum <= 0.0 {
            return Err(Error::Domain("softmax_ce weights must sum to > 0".into()));
        }
        let mut probs = vec![0.0; n * g];
        let mut loss = 0.0;
        for i in 0..n {
            let row = lv.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            for j in 0..g {
                probs[i * g + j] = (row[j] - mx).exp() / z;
            }
            let c = classes[i];
            if c >= g {
                return Err(Error::dim(format!("class {c} out of range {g}")));
            }
            loss += weights[i] * (z.ln() - (row[c] - mx));
        }
        let probs = Tensor::matrix(n, g, probs)?;
        self.push(
            Tensor::scalar(loss / wsum),
            Op::SoftmaxCe {
                logits,
                classes,
                weights,
                probs,
            },
        )
    }

    /// Accumulates gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(self.value(root).shape().to_vec(), vec![1.0])?);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut da = vec![0.0; m * k];
                gemm(g.data(), false, bv.data(), true, m, n, k, &mut da);
                let mut db = vec![0.0; k * n];
                gemm(av.data(), true, g.data(), false, k, m, n, &mut db);
                acc(*a, Tensor::matrix(m, k, da).expect("shape"));
                acc(*b, Tensor::matrix(k, n, db).expect("shape"));
            }
            Op::AddBias(x, b) => {
                let c = g.cols();
                let mut db = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                acc(*x, g.clone());
                acc(*b, Tensor::vector(db).expect("shape"));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(bv, |x, y| x * y).expect("shape"));
                acc(*b, g.zip_map(av, |x, y| x * y).expect("shape"));
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(bv, |x, y| x / y).expect("shape"));
                let db: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .zip(bv.data())
                    .map(|((gg, x), y)| -gg * x / (y * y))
                    .collect();
                acc(*b, Tensor::new(bv.shape().to_vec(), db).expect("shape"));
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
            Op::MulScalar(a, s) => {
                let (av, sv) = (self.value(*a), self.value(*s));
                acc(*a, g.map(|v| v * sv.item()));
                let ds: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                acc(*s, Tensor::new(sv.shape().to_vec(), vec![ds]).expect("shape"));
            }
            Op::MulConst(a, c) => acc(*a, g.zip_map(c, |x, y| x * y).expect("shape")),
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(
                    *a,
                    g.zip_map(av, |gg, x| if x > 0.0 { gg } else { 0.0 })
                        .expect("shape"),
                );
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, g.zip_map(y, |gg, s| gg * s * (1.0 - s)).expect("shape"));
            }
            Op::RowNorms(a) => {
                let av = self.value(*a);
                let c = av.cols();
                let norms = node.value.data();
                let mut da = vec![0.0; av.len()];
                for (i, (&nrm, &gg)) in norms.iter().zip(g.data()).enumerate() {
                    if nrm > 0.0 {
                        let f = gg / nrm;
                        for j in 0..c {
                            da[i * c + j] = f * av.data()[i * c + j];
                        }
                    }
                }
                acc(*a, Tensor::new(av.shape().to_vec(), da).expect("shape"));
            }
            Op::MulRows(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                acc(*x, scale_rows(g, sv.data()));
                let c = xv.cols();
                let ds: Vec<f64> = (0..xv.rows())
                    .map(|i| {
                        g.data()[i * c..(i + 1) * c]
                            .iter()
                            .zip(xv.row(i))
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect();
                acc(*s, Tensor::vector(ds).expect("shape"));
            }
            Op::ScaleRows(x, coeffs) => acc(*x, scale_rows(g, coeffs)),
            Op::GatherRows(x, idx) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = vec![0.0; xv.len()];
                for (j, &i) in idx.iter().enumerate() {
                    for (d, v) in dx[i * c..(i + 1) * c].iter_mut().zip(g.row(j)) {
                        *d += v;
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx).expect("shape"));
            }
            Op::ScatterRows(x, idx) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = Vec::with_capacity(xv.len());
                for &i in idx {
                    dx.extend_from_slice(&g.data()[i * c..(i + 1) * c]);
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx).expect("shape"));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let len = pv.len();
                    let d = g.data()[offset..offset + len].to_vec();
                    acc(p, Tensor::new(pv.shape().to_vec(), d).expect("shape"));
                    offset += len;
                }
            }
            Op::Take(x, idx) => {
                let xv = self.value(*x);
                let mut dx = vec![0.0; xv.len()];
                for (&i, gg) in idx.iter().zip(g.data()) {
                    dx[i] += gg;
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx).expect("shape"));
            }
            Op::Reshape(x) => {
                let xv = self.value(*x);
                acc(*x, g.reshape(xv.shape()).expect("shape"));
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                acc(*x, Tensor::full(xv.shape(), g.item()));
            }
            Op::Bce(p, t) => {
                let pv = self.value(*p);
                let scale = g.item() / pv.rows() as f64;
                let dp = pv
                    .zip_map(t, |p, t| {
                        if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                            0.0
                        } else {
                            scale * (p - t) / (p * (1.0 - p))
                        }
                    })
                    .expect("shape");
                acc(*p, dp);
            }
            Op::SoftmaxCe {
                logits,
                classes,
                weights,
                probs,
            } => {
                let wsum: f64 = weights.iter().sum();
                let gcols = probs.cols();
                let mut dl = probs.data().to_vec();
                for (i, (&c, &w)) in classes.iter().zip(weights).enumerate() {
                    dl[i * gcols + c] -= 1.0;
                    let f = g.item() * w / wsum;
                    for v in &mut dl[i * gcols..(i + 1) * gcols] {
                        *v *= f;
                    }
                }
                acc(
                    *logits,
                    Tensor::new(probs.shape().to_vec(), dl).expect("shape"),
                );
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::AddBias(..) => "add_bias",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Scale(..) => "scale",
        Op::MulScalar(..) => "mul_scalar",
        Op::MulConst(..) => "mul_const",
        Op::Relu(..) => "relu",
        Op::Sigmoid(..) => "sigmoid",
        Op::RowNorms(..) => "row_norms",
        Op::MulRows(..) => "mul_rows",
        Op::ScaleRows(..) => "scale_rows",
        Op::GatherRows(..) => "gather_rows",
        Op::ScatterRows(..) => "scatter_rows",
        Op::ConcatRows(..) => "concat_rows",
        Op::Take(..) => "take",
        Op::Reshape(..) => "reshape",
        Op::Sum(..) => "sum",
        Op::Bce(..) => "bce",
        Op::SoftmaxCe { .. } => "softmax_ce",
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn bce_term(p: f64, t: f64) -> f64 {
    let p = clamp_prob(p);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

fn scale_rows(x: &Tensor, coeffs: &[f64]) -> Tensor {
    let c = x.cols();
    let mut out = x.clone();
    for (row, &s) in out.data_mut().chunks_mut(c).zip(coeffs) {
        for v in row {
            *v *= s;
        }
    }
    out
}

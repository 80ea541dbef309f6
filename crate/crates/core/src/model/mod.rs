//! Backbone, per-attribute decomposition head and shared classifier.
//!
//! Weights follow the row-vector convention `y = x W + b`, so a layer
//! mapping `d_in -> d_out` stores `W` as `[d_in, d_out]`.

mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta};

use crate::datagen::rng_from;
use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var, PROB_CLAMP};

/// Layer widths of the three-stage network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dims {
    /// Input dimension D.
    pub input: usize,
    /// Attribute count C.
    pub attributes: usize,
    /// Hybrid feature dimension K.
    pub hybrid: usize,
    /// Backbone hidden width H.
    pub hidden: usize,
    /// Classifier hidden width H_c.
    pub classifier_hidden: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            input: 64,
            attributes: 8,
            hybrid: 32,
            hidden: 64,
            classifier_hidden: 32,
        }
    }
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.input,
            self.attributes,
            self.hybrid,
            self.hidden,
            self.classifier_hidden,
        ];
        if all.contains(&0) {
            return Err(Error::contract(format!("all model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[d_in, d_out]),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    fn uniform(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let data = (0..d_in * d_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            weight: Tensor::matrix(d_in, d_out, data).expect("positive dims"),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    fn bind(&self, tape: &mut Tape) -> BoundLinear {
        BoundLinear {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.weight, self.bias)
    }
}

/// All trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    dims: Dims,
    pub backbone: [Linear; 2],
    pub decomposer: Vec<Linear>,
    pub classifier: [Linear; 2],
}

/// Parameters recorded as leaves on a tape, in [`ModelParams::tensors`] order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub backbone: [BoundLinear; 2],
    pub decomposer: Vec<BoundLinear>,
    pub classifier: [BoundLinear; 2],
}

impl BoundParams {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in self
            .backbone
            .iter()
            .chain(&self.decomposer)
            .chain(&self.classifier)
        {
            out.push(l.weight);
            out.push(l.bias);
        }
        out
    }
}

/// Per-attribute features of a batch on a tape: `parts[s]` is `[n, K]`.
#[derive(Clone, Debug)]
pub struct TapeBundle {
    pub parts: Vec<Var>,
    pub sum: Var,
}

/// Attribute-specific features of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub parts: Vec<Vec<f64>>,
    pub sum: Vec<f64>,
}

/// Evaluated features of a batch: `parts[s]` and `sum` are `[n, K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchFeatures {
    pub parts: Vec<Tensor>,
    pub sum: Tensor,
}

impl BatchFeatures {
    pub fn len(&self) -> usize {
        self.sum.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bundle(&self, i: usize) -> FeatureBundle {
        FeatureBundle {
            parts: self.parts.iter().map(|p| p.row(i).to_vec()).collect(),
            sum: self.sum.row(i).to_vec(),
        }
    }
}

impl ModelParams {
    /// Seeded initialisation: weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(dims: Dims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = rng_from(seed);
        let Dims {
            input: d,
            attributes: c,
            hybrid: k,
            hidden: h,
            classifier_hidden: hc,
        } = dims;
        let backbone = [Linear::uniform(d, h, &mut rng), Linear::uniform(h, k, &mut rng)];
        let decomposer = (0..c).map(|_| Linear::uniform(k, k, &mut rng)).collect();
        let classifier = [Linear::uniform(k, hc, &mut rng), Linear::uniform(hc, c, &mut rng)];
        Ok(Self {
            dims,
            backbone,
            decomposer,
            classifier,
        })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(dims: Dims) -> Result<Self> {
        dims.validate()?;
        let Dims {
            input: d,
            attributes: c,
            hybrid: k,
            hidden: h,
            classifier_hidden: hc,
        } = dims;
        Ok(Self {
            dims,
            backbone: [Linear::zeros(d, h), Linear::zeros(h, k)],
            decomposer: (0..c).map(|_| Linear::zeros(k, k)).collect(),
            classifier: [Linear::zeros(k, hc), Linear::zeros(hc, c)],
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    fn layers(&self) -> impl Iterator<Item = &Linear> {
        self.backbone
            .iter()
            .chain(&self.decomposer)
            .chain(&self.classifier)
    }

    /// Parameter tensors in a fixed order: backbone, decomposer branches,
    /// classifier; weight before bias within each layer.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.backbone
            .iter_mut()
            .chain(self.decomposer.iter_mut())
            .chain(self.classifier.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Names matching [`ModelParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut push = |prefix: String| {
            names.push(format!("{prefix}.weight"));
            names.push(format!("{prefix}.bias"));
        };
        for i in 0..2 {
            push(format!("backbone.{i}"));
        }
        for s in 0..self.dims.attributes {
            push(format!("decomposer.{s}"));
        }
        for i in 0..2 {
            push(format!("classifier.{i}"));
        }
        names
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Rebuilds parameters from tensors in [`ModelParams::tensors`] order,
    /// checking every shape.
    pub fn from_tensors(dims: Dims, tensors: Vec<Tensor>) -> Result<Self> {
        let mut out = Self::zeros(dims)?;
        if tensors.len() != out.tensors().len() {
            return Err(Error::dim(format!(
                "expected {} parameter tensors, got {}",
                out.tensors().len(),
                tensors.len()
            )));
        }
        for (slot, t) in out.tensors_mut().into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::dim(format!(
                    "parameter shape {:?} where {:?} was expected",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(out)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            backbone: [self.backbone[0].bind(tape), self.backbone[1].bind(tape)],
            decomposer: self.decomposer.iter().map(|l| l.bind(tape)).collect(),
            classifier: [self.classifier[0].bind(tape), self.classifier[1].bind(tape)],
        }
    }

    /// Batched features of `x` (`[n, D]`), evaluated on a scratch tape.
    pub fn features(&self, x: &Tensor) -> Result<BatchFeatures> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let h = extract(&mut tape, &bound, xv)?;
        let b = decompose(&mut tape, &bound, h)?;
        Ok(BatchFeatures {
            parts: b.parts.iter().map(|&p| tape.value(p).clone()).collect(),
            sum: tape.value(b.sum).clone(),
        })
    }

    /// Clamped posteriors for feature rows `f` (`[n, K]`).
    pub fn posteriors(&self, f: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let fv = tape.leaf(f.clone());
        let p = classify(&mut tape, &bound, fv)?;
        Ok(tape
            .value(p)
            .map(|v| v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)))
    }

    /// The evaluation path: `classify(decompose(extract(x)).sum)`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.features(x)?;
        self.posteriors(&f.sum)
    }

    pub fn extract_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xv = tape.leaf(Tensor::matrix(1, x.len(), x.to_vec())?);
        let h = extract(&mut tape, &bound, xv)?;
        Ok(tape.value(h).data().to_vec())
    }

    pub fn decompose_one(&self, hybrid: &[f64]) -> Result<FeatureBundle> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let hv = tape.leaf(Tensor::matrix(1, hybrid.len(), hybrid.to_vec())?);
        let b = decompose(&mut tape, &bound, hv)?;
        Ok(FeatureBundle {
            parts: b.parts.iter().map(|&p| tape.value(p).data().to_vec()).collect(),
            sum: tape.value(b.sum).data().to_vec(),
        })
    }

    pub fn classify_one(&self, f: &[f64]) -> Result<Vec<f64>> {
        let p = self.posteriors(&Tensor::matrix(1, f.len(), f.to_vec())?)?;
        Ok(p.into_data())
    }
}

fn expect_cols(tape: &Tape, x: Var, cols: usize, what: &str) -> Result<()> {
    let shape = tape.value(x).shape();
    if shape.len() != 2 || shape[1] != cols {
        return Err(Error::dim(format!("{what} expects [n, {cols}] input, got {shape:?}")));
    }
    Ok(())
}

/// Hybrid features `[n, K]` from inputs `[n, D]`.
pub fn extract(tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var> {
    let d = tape.value(p.backbone[0].weight).rows();
    expect_cols(tape, x, d, "extract")?;
    let h = p.backbone[0].apply(tape, x)?;
    let h = tape.relu(h)?;
    let h = p.backbone[1].apply(tape, h)?;
    tape.relu(h)
}

/// Splits hybrid features into per-attribute parts `ReLU(h W_s + b_s)`.
///
/// The sum is accumulated left to right over attributes; every other place
/// that re-sums parts uses the same order.
pub fn decompose(tape: &mut Tape, p: &BoundParams, hybrid: Var) -> Result<TapeBundle> {
    let k = tape.value(p.decomposer[0].weight).rows();
    expect_cols(tape, hybrid, k, "decompose")?;
    let mut parts = Vec::with_capacity(p.decomposer.len());
    for branch in &p.decomposer {
        let z = branch.apply(tape, hybrid)?;
        parts.push(tape.relu(z)?);
    }
    let sum = sum_parts(tape, &parts)?;
    Ok(TapeBundle { parts, sum })
}

pub fn sum_parts(tape: &mut Tape, parts: &[Var]) -> Result<Var> {
    let mut acc = *parts
        .first()
        .ok_or_else(|| Error::contract("cannot sum an empty set of parts"))?;
    for &p in &parts[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(acc)
}

/// Sigmoid posteriors `[n, C]` from features `[n, K]`.
pub fn classify(tape: &mut Tape, p: &BoundParams, f: Var) -> Result<Var> {
    let k = tape.value(p.classifier[0].weight).rows();
    expect_cols(tape, f, k, "classify")?;
    let z = p.classifier[0].apply(tape, f)?;
    let z = tape.relu(z)?;
    let z = p.classifier[1].apply(tape, z)?;
    tape.sigmoid(z)
}

/// Pairwise cosine similarity of the classifier's final-layer anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorReport {
    pub matrix: Vec<Vec<f64>>,
    /// Attributes whose anchor is the zero vector; their entries are 0.
    pub zero_anchors: Vec<bool>,
}

impl AnchorReport {
    /// Mean absolute off-diagonal cosine.
    pub fn mean_abs_off_diagonal(&self) -> f64 {
        let c = self.matrix.len();
        if c < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    total += self.matrix[i][j].abs();
                }
            }
        }
        total / (c * (c - 1)) as f64
    }
}

/// Anchor `s` is the weight vector feeding output `s`: column `s` of the
/// `[H_c, C]` final classifier weight.
pub fn anchor_cosine_matrix(params: &ModelParams) -> AnchorReport {
    let w = &params.classifier[1].weight;
    let (hc, c) = (w.rows(), w.cols());
    let anchors: Vec<Vec<f64>> = (0..c)
        .map(|s| (0..hc).map(|r| w.get(r, s)).collect())
        .collect();
    cosine_matrix(&anchors)
}

pub fn cosine_matrix(vectors: &[Vec<f64>]) -> AnchorReport {
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let zero: Vec<bool> = norms.iter().map(|&n| n == 0.0).collect();
    let c = vectors.len();
    let mut matrix = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in i..c {
            let v = if zero[i] || zero[j] {
                0.0
            } else if i == j {
                1.0
            } else {
                let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            matrix[i][j] = v;
            matrix[j][i] = v;
        }
    }
    AnchorReport {
        matrix,
        zero_anchors: zero,
    }
}

//! The randomized feature transform and the training objectives built on it.

mod transform;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use transform::{
    apply_g, draw_transforms, ndsi, plain_interp, transform_bundles, Branch, BranchCounts,
    Transformed, TransformDraw, EPS_NORM,
};

use crate::error::{Error, Result};
use crate::model::{self, BoundParams, ModelParams, TapeBundle};
use crate::numcore::{Tape, Tensor, Var};

/// Training objective for one update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Plain BCE on the clean features.
    Baseline,
    /// BCE plus `lambda` times the posterior-invariant regularizer.
    Eq3,
    /// BCE of the fully transformed feature against mixed soft targets.
    Eq4,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Baseline => "baseline",
            Objective::Eq3 => "eq3",
            Objective::Eq4 => "eq4",
        }
    }

    pub fn uses_transform(self) -> bool {
        !matches!(self, Objective::Baseline)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Objective::Baseline),
            "eq3" => Ok(Objective::Eq3),
            "eq4" => Ok(Objective::Eq4),
            other => Err(Error::contract(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub lambda: f64,
    pub ndsi: bool,
    /// Weight of an extra clean-path BCE term in eq4 mode (0 = objective alone).
    pub eq4_clean_weight: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            ndsi: true,
            eq4_clean_weight: 0.0,
        }
    }
}

/// Runs the backbone and decomposition head on inputs `x` (`[n, D]`).
pub fn forward(tape: &mut Tape, p: &BoundParams, x: Var) -> Result<TapeBundle> {
    let h = model::extract(tape, p, x)?;
    model::decompose(tape, p, h)
}

fn bce_on(tape: &mut Tape, p: &BoundParams, f: Var, targets: &Tensor) -> Result<Var> {
    let post = model::classify(tape, p, f)?;
    tape.bce(post, targets)
}

/// `BCE(classify(f), a)` on a forwarded batch.
pub fn loss_baseline_bce(
    tape: &mut Tape,
    p: &BoundParams,
    bundle: &TapeBundle,
    targets: &Tensor,
) -> Result<Var> {
    bce_on(tape, p, bundle.sum, targets)
}

fn check_batch(tape: &Tape, bundle: &TapeBundle, targets: &Tensor) -> Result<usize> {
    let n = tape.value(bundle.sum).rows();
    if n < 2 {
        return Err(Error::contract(format!("transform losses need a batch of >= 2, got {n}")));
    }
    if targets.shape() != [n, bundle.parts.len()] {
        return Err(Error::dim(format!(
            "targets {:?} for a batch of {n} with {} attributes",
            targets.shape(),
            bundle.parts.len()
        )));
    }
    Ok(n)
}

/// Posterior-invariant regularizer: for each attribute `s` the classifier
/// sees the transformed feature with part `s` restored to the original,
/// `f~ - f~^s + f^s`, and is scored on output `s` against the original label
/// with two-sided BCE.
///
/// The substituted input is summed part by part in attribute order, so with
/// an identity transform it equals the clean feature bit for bit.
pub fn loss_posterior_invariant(
    tape: &mut Tape,
    p: &BoundParams,
    bundle: &TapeBundle,
    targets: &Tensor,
    draws: &TransformDraw,
    use_ndsi: bool,
) -> Result<(Var, BranchCounts)> {
    let n = check_batch(tape, bundle, targets)?;
    let c = bundle.parts.len();
    let g = apply_g(tape, &bundle.parts, targets, draws, use_ndsi)?;
    let mut inputs = Vec::with_capacity(c);
    for s in 0..c {
        let mixed: Vec<Var> = (0..c)
            .map(|t| if t == s { bundle.parts[t] } else { g.parts[t] })
            .collect();
        inputs.push(model::sum_parts(tape, &mixed)?);
    }
    let stacked = tape.concat_rows(&inputs)?;
    let post = model::classify(tape, p, stacked)?;
    // Row s*n + i of `post` belongs to substitution s of sample i.
    let idx: Vec<usize> = (0..n)
        .flat_map(|i| (0..c).map(move |s| (s * n + i) * c + s))
        .collect();
    let picked = tape.take(post, idx, &[n, c])?;
    Ok((tape.bce(picked, targets)?, g.counts))
}

/// Soft targets `alpha a_i + (1 - alpha) a_r` per attribute; agreeing
/// labels are passed through unchanged.
pub fn mixed_targets(targets: &Tensor, draws: &TransformDraw) -> Result<Tensor> {
    let (n, c) = (targets.rows(), targets.cols());
    draws.validate(n, c)?;
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        for s in 0..c {
            let (a, b) = (targets.get(i, s), targets.get(draws.partner[i][s], s));
            let al = draws.alpha[i][s];
            out.push(if a == b { a } else { al * a + (1.0 - al) * b });
        }
    }
    Tensor::matrix(n, c, out)
}

/// Single-inference objective: `BCE(classify(f~), mixed targets)`.
pub fn loss_mixup_efficient(
    tape: &mut Tape,
    p: &BoundParams,
    bundle: &TapeBundle,
    targets: &Tensor,
    draws: &TransformDraw,
    use_ndsi: bool,
) -> Result<(Var, BranchCounts)> {
    check_batch(tape, bundle, targets)?;
    let g = apply_g(tape, &bundle.parts, targets, draws, use_ndsi)?;
    let f_tilde = model::sum_parts(tape, &g.parts)?;
    let soft = mixed_targets(targets, draws)?;
    Ok((bce_on(tape, p, f_tilde, &soft)?, g.counts))
}

/// The objective of one training step.
pub fn total_loss(
    tape: &mut Tape,
    p: &BoundParams,
    bundle: &TapeBundle,
    targets: &Tensor,
    draws: Option<&TransformDraw>,
    objective: Objective,
    opts: &LossOptions,
) -> Result<(Var, BranchCounts)> {
    if !(opts.lambda >= 0.0) || !(opts.eq4_clean_weight >= 0.0) {
        return Err(Error::Domain("loss weights must be >= 0".into()));
    }
    let need = || {
        draws.ok_or_else(|| Error::contract(format!("mode {objective} needs a transform draw")))
    };
    match objective {
        Objective::Baseline => Ok((
            loss_baseline_bce(tape, p, bundle, targets)?,
            BranchCounts::default(),
        )),
        Objective::Eq3 => {
            let clean = loss_baseline_bce(tape, p, bundle, targets)?;
            let (reg, counts) =
                loss_posterior_invariant(tape, p, bundle, targets, need()?, opts.ndsi)?;
            let reg = tape.scale(reg, opts.lambda)?;
            Ok((tape.add(clean, reg)?, counts))
        }
        Objective::Eq4 => {
            let (mix, counts) = loss_mixup_efficient(tape, p, bundle, targets, need()?, opts.ndsi)?;
            if opts.eq4_clean_weight > 0.0 {
                let clean = loss_baseline_bce(tape, p, bundle, targets)?;
                let clean = tape.scale(clean, opts.eq4_clean_weight)?;
                Ok((tape.add(mix, clean)?, counts))
            } else {
                Ok((mix, counts))
            }
        }
    }
}

/// Loss value and parameter gradients for one batch.
#[derive(Clone, Debug)]
pub struct Evaluated {
    pub loss: f64,
    /// In [`ModelParams::tensors`] order.
    pub grads: Vec<Tensor>,
    pub counts: BranchCounts,
}

/// Builds a fresh tape, evaluates the objective and back-propagates.
pub fn evaluate(
    params: &ModelParams,
    x: &Tensor,
    targets: &Tensor,
    draws: Option<&TransformDraw>,
    objective: Objective,
    opts: &LossOptions,
) -> Result<Evaluated> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let bundle = forward(&mut tape, &bound, xv)?;
    let (loss, counts) = total_loss(&mut tape, &bound, &bundle, targets, draws, objective, opts)?;
    let grads = tape.backward(loss)?;
    let vars = bound.vars();
    let grads = vars
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.wrt(v, t))
        .collect();
    Ok(Evaluated {
        loss: tape.value(loss).item(),
        grads,
        counts,
    })
}

/// Loss value only.
pub fn loss_value(
    params: &ModelParams,
    x: &Tensor,
    targets: &Tensor,
    draws: Option<&TransformDraw>,
    objective: Objective,
    opts: &LossOptions,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let bundle = forward(&mut tape, &bound, xv)?;
    let (loss, _) = total_loss(&mut tape, &bound, &bundle, targets, draws, objective, opts)?;
    Ok(tape.value(loss).item())
}

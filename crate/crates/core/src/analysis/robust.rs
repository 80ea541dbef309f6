//! Post-hoc treatments of mutually exclusive attribute groups.

use crate::error::{Error, Result};
use crate::numcore::{AdamConfig, AdamState, Tape, Tensor};

fn check_group(group: &[usize], c: usize) -> Result<()> {
    if group.is_empty() {
        return Err(Error::contract("attribute group is empty"));
    }
    let mut seen = vec![false; c];
    for &g in group {
        if g >= c || seen[g] {
            return Err(Error::contract(format!(
                "group member {g} is out of range or repeated for {c} attributes"
            )));
        }
        seen[g] = true;
    }
    Ok(())
}

/// Thresholds every attribute, then keeps exactly one positive inside
/// `group`: the member with the highest posterior (lowest index on ties).
pub fn robust_b_rectify(posteriors: &Tensor, group: &[usize], threshold: f64) -> Result<Vec<Vec<u8>>> {
    check_group(group, posteriors.cols())?;
    let mut out = super::binarize(posteriors, threshold);
    for (i, row) in out.iter_mut().enumerate() {
        let mut best = group[0];
        for &g in &group[1..] {
            let (pg, pb) = (posteriors.get(i, g), posteriors.get(i, best));
            if pg > pb || (pg == pb && g < best) {
                best = g;
            }
        }
        for &g in group {
            row[g] = (g == best) as u8;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { steps: 400, lr: 0.05 }
    }
}

/// Linear softmax head over frozen features, one class per group member.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustHead {
    pub group: Vec<usize>,
    pub weight: Tensor,
    pub bias: Tensor,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Training samples dropped for not having exactly one positive in the group.
    pub excluded: usize,
    /// Per-class loss weights used in training.
    pub class_weights: Vec<f64>,
}

/// Inverse-frequency class weights `n / (G * count_g)`; absent classes get 0.
pub fn inverse_frequency_weights(classes: &[usize], g: usize) -> Vec<f64> {
    let mut counts = vec![0usize; g];
    for &c in classes {
        counts[c] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count().max(1);
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                classes.len() as f64 / (present as f64 * c as f64)
            }
        })
        .collect()
}

/// Trains the head with inverse-frequency weighted cross-entropy.
///
/// `features` are the frozen `[n, K]` training features; only samples with
/// exactly one positive group label take part.
pub fn robust_a_head(
    features: &Tensor,
    labels: &[Vec<u8>],
    group: &[usize],
    cfg: &HeadConfig,
) -> Result<RobustHead> {
    let c = labels.first().map_or(0, Vec::len);
    check_group(group, c)?;
    if labels.len() != features.rows() {
        return Err(Error::dim("one label row per feature row is required"));
    }
    let mut rows = Vec::new();
    let mut classes = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        let on: Vec<usize> = (0..group.len()).filter(|&j| l[group[j]] == 1).collect();
        if on.len() == 1 {
            rows.push(i);
            classes.push(on[0]);
        }
    }
    let excluded = labels.len() - rows.len();
    let g = group.len();
    let mut present = vec![false; g];
    classes.iter().for_each(|&c| present[c] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::contract("the group needs at least 2 classes present in training data"));
    }
    let weights = inverse_frequency_weights(&classes, g);
    let row_weights: Vec<f64> = classes.iter().map(|&c| weights[c]).collect();

    let k = features.cols();
    let mut x = Vec::with_capacity(rows.len() * k);
    for &i in &rows {
        x.extend_from_slice(features.row(i));
    }
    let (mean, scale) = column_stats(&x, k);
    let x = Tensor::matrix(rows.len(), k, normalise(&x, &mean, &scale))?;

    let mut w = Tensor::zeros(&[k, g]);
    let mut b = Tensor::zeros(&[g]);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        &[&w, &b],
    );
    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let (wv, bv, xv) = (tape.leaf(w.clone()), tape.leaf(b.clone()), tape.leaf(x.clone()));
        let z = tape.linear(xv, wv, bv)?;
        let loss = tape.softmax_ce(z, classes.clone(), row_weights.clone())?;
        let grads = tape.backward(loss)?;
        let gs = [grads.wrt(wv, &w), grads.wrt(bv, &b)];
        adam.step(&mut [&mut w, &mut b], &gs)?;
    }
    Ok(RobustHead {
        group: group.to_vec(),
        weight: w,
        bias: b,
        mean,
        scale,
        excluded,
        class_weights: weights,
    })
}

fn column_stats(x: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (x.len() / k) as f64;
    let mut mean = vec![0.0; k];
    for row in x.chunks(k) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; k];
    for row in x.chunks(k) {
        for j in 0..k {
            var[j] += (row[j] - mean[j]).powi(2) / n;
        }
    }
    let scale = var
        .iter()
        .map(|v| if v.sqrt() > 1e-12 { 1.0 / v.sqrt() } else { 1.0 })
        .collect();
    (mean, scale)
}

fn normalise(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    let k = mean.len();
    let mut out = x.to_vec();
    for row in out.chunks_mut(k) {
        for j in 0..k {
            row[j] = (row[j] - mean[j]) * scale[j];
        }
    }
    out
}

impl RobustHead {
    /// Index into `group` of the predicted class for each row of `features`.
    pub fn predict_classes(&self, features: &Tensor) -> Result<Vec<usize>> {
        let k = self.mean.len();
        if features.cols() != k {
            return Err(Error::dim(format!("head expects {k} features")));
        }
        let x = Tensor::matrix(features.rows(), k, normalise(features.data(), &self.mean, &self.scale))?;
        let mut tape = Tape::new();
        let (wv, bv, xv) = (
            tape.leaf(self.weight.clone()),
            tape.leaf(self.bias.clone()),
            tape.leaf(x),
        );
        let z = tape.linear(xv, wv, bv)?;
        let z = tape.value(z);
        Ok((0..z.rows())
            .map(|i| {
                let row = z.row(i);
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Thresholded posteriors outside the group, head prediction inside it.
    pub fn rectify(&self, posteriors: &Tensor, features: &Tensor, threshold: f64) -> Result<Vec<Vec<u8>>> {
        if posteriors.rows() != features.rows() {
            return Err(Error::dim("posteriors and features must have the same rows"));
        }
        let classes = self.predict_classes(features)?;
        let mut out = super::binarize(posteriors, threshold);
        for (row, &cls) in out.iter_mut().zip(&classes) {
            for (j, &g) in self.group.iter().enumerate() {
                row[g] = (j == cls) as u8;
            }
        }
        Ok(out)
    }
}

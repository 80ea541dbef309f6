//! Probe-based estimates of `I(y^k; f^s)`.
//!
//! A logistic-regression probe is fitted on one half of the samples; its
//! held-out scores are cut into equal-count bins and the information is the
//! plug-in `H(y) - sum_b p(b) H(y | b)` in nats. Because the probe is linear
//! and the binning coarse, this is a lower bound on the extractable
//! information. A second probe trained on permuted targets gives the null.

use rand::seq::SliceRandom;

use crate::datagen::{derive_seed, rng_from};
use crate::error::{Error, Result};
use crate::model::BatchFeatures;
use crate::numcore::{AdamConfig, AdamState, Tape, Tensor};

/// Estimates may dip this far below zero only through rounding.
pub const EPS_MI: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub bins: usize,
    pub steps: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            bins: 8,
            steps: 300,
            lr: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiEstimate {
    /// Estimated information in nats.
    pub mi: f64,
    /// Same estimator with targets permuted before fitting.
    pub null_mi: f64,
    /// Held-out accuracy of the probe at threshold 0.5.
    pub probe_accuracy: f64,
    pub bins: usize,
    /// Targets were all one class; `mi` is 0 by definition.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiEntry {
    /// Target attribute.
    pub k: usize,
    /// Feature part.
    pub s: usize,
    pub estimate: MiEstimate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiTable {
    pub entries: Vec<MiEntry>,
}

impl MiTable {
    fn mean_where(&self, pick: impl Fn(&MiEntry) -> bool, val: impl Fn(&MiEntry) -> f64) -> f64 {
        let xs: Vec<f64> = self.entries.iter().filter(|e| pick(e)).map(val).collect();
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    }

    /// Mean of `I(y^k; f^s)` over `k != s`.
    pub fn mean_off_target(&self) -> f64 {
        self.mean_where(|e| e.k != e.s, |e| e.estimate.mi)
    }

    /// Mean of `I(y^s; f^s)`.
    pub fn mean_on_target(&self) -> f64 {
        self.mean_where(|e| e.k == e.s, |e| e.estimate.mi)
    }

    pub fn mean_null(&self) -> f64 {
        self.mean_where(|_| true, |e| e.estimate.null_mi)
    }

    pub fn max_null(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.estimate.null_mi)
            .fold(0.0, f64::max)
    }
}

fn entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / nf;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in `H(y) - H(y | bin)` with `bins` equal-count bins of `scores`.
pub fn binned_information(scores: &[f64], targets: &[u8], bins: usize) -> Result<f64> {
    let m = scores.len();
    if m != targets.len() || m == 0 {
        return Err(Error::dim("scores and targets must be non-empty and aligned"));
    }
    if bins < 2 {
        return Err(Error::Domain("at least 2 bins are required".into()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    // Nominal equal-count cuts, pushed forward so equal scores share a bin.
    let mut cuts = vec![0];
    for b in 1..=bins {
        let mut c = (b * m / bins).max(*cuts.last().unwrap());
        while c > 0 && c < m && scores[order[c - 1]] == scores[order[c]] {
            c += 1;
        }
        cuts.push(c);
    }
    let mut total = [0usize; 2];
    let mut conditional = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mut counts = [0usize; 2];
        for &i in &order[lo..hi] {
            counts[targets[i] as usize] += 1;
        }
        total[0] += counts[0];
        total[1] += counts[1];
        conditional += (hi - lo) as f64 / m as f64 * entropy(&counts);
    }
    Ok(entropy(&total) - conditional)
}

struct Halves {
    train: Vec<usize>,
    eval: Vec<usize>,
}

fn split_halves(n: usize, seed: u64) -> Halves {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed));
    let eval = idx.split_off(n / 2);
    Halves { train: idx, eval }
}

fn select(x: &Tensor, rows: &[usize]) -> Tensor {
    let k = x.cols();
    let mut data = Vec::with_capacity(rows.len() * k);
    for &i in rows {
        data.extend_from_slice(x.row(i));
    }
    Tensor::matrix(rows.len(), k, data).expect("non-empty selection")
}

/// Standardises columns with statistics of `fit`; constant columns keep
/// unit scale.
fn standardise(fit: &Tensor, apply: &[&Tensor]) -> Vec<Tensor> {
    let (n, k) = (fit.rows(), fit.cols());
    let mut mean = vec![0.0; k];
    let mut var = vec![0.0; k];
    for i in 0..n {
        for (j, v) in fit.row(i).iter().enumerate() {
            mean[j] += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for i in 0..n {
        for (j, v) in fit.row(i).iter().enumerate() {
            var[j] += (v - mean[j]).powi(2);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let sd = (v / n as f64).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    apply
        .iter()
        .map(|t| {
            let mut d = t.data().to_vec();
            for row in d.chunks_mut(k) {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (*v - mean[j]) * scale[j];
                }
            }
            Tensor::new(t.shape().to_vec(), d).expect("same shape")
        })
        .collect()
}

/// Fits one independent logistic probe per target column and returns the
/// held-out logits `[m_eval, T]`.
///
/// The loss separates over columns and Adam updates coordinates
/// independently, so a joint fit equals `T` separate fits.
fn fit_probes(x_train: &Tensor, y_train: &Tensor, x_eval: &Tensor, cfg: &ProbeConfig) -> Result<Tensor> {
    let (k, t) = (x_train.cols(), y_train.cols());
    let mut w = Tensor::zeros(&[k, t]);
    let mut b = Tensor::zeros(&[t]);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        &[&w, &b],
    );
    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let (wv, bv) = (tape.leaf(w.clone()), tape.leaf(b.clone()));
        let xv = tape.leaf(x_train.clone());
        let z = tape.linear(xv, wv, bv)?;
        let p = tape.sigmoid(z)?;
        let loss = tape.bce(p, y_train)?;
        let g = tape.backward(loss)?;
        let grads = [g.wrt(wv, &w), g.wrt(bv, &b)];
        adam.step(&mut [&mut w, &mut b], &grads)?;
    }
    let mut tape = Tape::new();
    let (wv, bv) = (tape.leaf(w), tape.leaf(b));
    let xv = tape.leaf(x_eval.clone());
    let z = tape.linear(xv, wv, bv)?;
    Ok(tape.value(z).clone())
}

fn targets_tensor(rows: &[usize], cols: &[Vec<u8>]) -> Tensor {
    let t = cols.len();
    let mut data = Vec::with_capacity(rows.len() * t);
    for &i in rows {
        for c in cols {
            data.push(c[i] as f64);
        }
    }
    Tensor::matrix(rows.len(), t, data).expect("non-empty")
}

/// Estimates for one feature block against several binary target columns.
fn probe_block(features: &Tensor, targets: &[Vec<u8>], cfg: &ProbeConfig, seed: u64) -> Result<Vec<MiEstimate>> {
    let n = features.rows();
    if n < 100 {
        return Err(Error::contract(format!("mi probe needs n >= 100, got {n}")));
    }
    if cfg.bins < 2 {
        return Err(Error::Domain("at least 2 bins are required".into()));
    }
    if targets.iter().any(|t| t.len() != n) {
        return Err(Error::dim("targets must have one entry per feature row"));
    }
    let halves = split_halves(n, derive_seed(seed, &[1]));
    let xs = standardise(
        &select(features, &halves.train),
        &[&select(features, &halves.train), &select(features, &halves.eval)],
    );
    let (x_train, x_eval) = (&xs[0], &xs[1]);

    let mut permuted = Vec::with_capacity(targets.len());
    for (j, col) in targets.iter().enumerate() {
        let mut p = col.clone();
        p.shuffle(&mut rng_from(derive_seed(seed, &[2, j as u64])));
        permuted.push(p);
    }

    let logits = fit_probes(x_train, &targets_tensor(&halves.train, targets), x_eval, cfg)?;
    let null_logits = fit_probes(x_train, &targets_tensor(&halves.train, &permuted), x_eval, cfg)?;

    let mut out = Vec::with_capacity(targets.len());
    for (j, col) in targets.iter().enumerate() {
        let positives = col.iter().filter(|&&v| v == 1).count();
        if positives == 0 || positives == n {
            out.push(MiEstimate {
                mi: 0.0,
                null_mi: 0.0,
                probe_accuracy: 1.0,
                bins: cfg.bins,
                degenerate: true,
            });
            continue;
        }
        let eval_y: Vec<u8> = halves.eval.iter().map(|&i| col[i]).collect();
        let eval_null: Vec<u8> = halves.eval.iter().map(|&i| permuted[j][i]).collect();
        let scores: Vec<f64> = (0..halves.eval.len()).map(|r| logits.get(r, j)).collect();
        let null_scores: Vec<f64> = (0..halves.eval.len()).map(|r| null_logits.get(r, j)).collect();
        let correct = scores
            .iter()
            .zip(&eval_y)
            .filter(|(&z, &y)| (z > 0.0) == (y == 1))
            .count();
        out.push(MiEstimate {
            mi: binned_information(&scores, &eval_y, cfg.bins)?,
            null_mi: binned_information(&null_scores, &eval_null, cfg.bins)?,
            probe_accuracy: correct as f64 / eval_y.len() as f64,
            bins: cfg.bins,
            degenerate: false,
        });
    }
    Ok(out)
}

/// `I(y; f)` for one feature matrix `[n, K]` and binary targets.
pub fn mi_probe(features: &Tensor, targets: &[u8], cfg: &ProbeConfig, seed: u64) -> Result<MiEstimate> {
    Ok(probe_block(features, &[targets.to_vec()], cfg, seed)?[0])
}

/// Estimates for every `(k, s)`: target attribute `k`, feature part `s`.
pub fn mi_table(features: &BatchFeatures, labels: &[Vec<u8>], cfg: &ProbeConfig, seed: u64) -> Result<MiTable> {
    let c = features.parts.len();
    if labels.len() != features.len() || labels.iter().any(|l| l.len() != c) {
        return Err(Error::dim("labels do not match the features"));
    }
    let columns: Vec<Vec<u8>> = (0..c).map(|k| labels.iter().map(|l| l[k]).collect()).collect();
    let mut entries = Vec::with_capacity(c * c);
    for (s, part) in features.parts.iter().enumerate() {
        let est = probe_block(part, &columns, cfg, derive_seed(seed, &[s as u64]))?;
        for (k, e) in est.into_iter().enumerate() {
            entries.push(MiEntry { k, s, estimate: e });
        }
    }
    entries.sort_by_key(|e| (e.k, e.s));
    Ok(MiTable { entries })
}

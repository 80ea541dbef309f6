//! Multi-seed, multi-arm comparisons.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{train_run, write_run, Mode, RunConfig, RunRecord};
use crate::analysis::{attribute_metrics, csv, robust_a_head, robust_b_rectify, HeadConfig};
use crate::error::{Error, Result};
use crate::format::real;
use crate::model::ModelParams;
use crate::numcore::Tensor;

/// Per-seed rows of a comparison.
pub const COMPARE_HEADER: &str =
    "arm,mode,ndsi,seed,train_ma,test_ma,test_precision,test_recall,test_f1,\
     diff_ma,diff_recall,diff_f1,mi_off_target,mi_on_target,mi_null_max,anchor_off_diagonal,steps";
/// One row per arm, aggregated over seeds (sample standard deviation).
pub const SUMMARY_HEADER: &str =
    "arm,seeds,train_ma_mean,test_ma_mean,test_ma_sd,test_recall_mean,test_recall_sd,\
     test_f1_mean,test_f1_sd,diff_ma_mean,diff_ma_sd";

#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub mode: Mode,
    pub ndsi: bool,
    pub label: String,
}

impl Arm {
    pub fn new(mode: Mode, ndsi: bool) -> Self {
        let label = if mode.objective().uses_transform() {
            format!("{mode}{}", if ndsi { "+ndsi" } else { "-ndsi" })
        } else {
            mode.to_string()
        };
        Self { mode, ndsi, label }
    }

    fn config(&self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut c = base.clone();
        c.mode = self.mode;
        c.ndsi = self.ndsi;
        c.seed = seed;
        c
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

#[derive(Clone, Debug)]
pub struct ArmSummary {
    pub arm: Arm,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    /// Per-seed test mA minus the reference arm's, when one exists.
    pub diff_ma: Option<Vec<f64>>,
    pub diff_recall: Option<Vec<f64>>,
    pub diff_f1: Option<Vec<f64>>,
}

impl ArmSummary {
    fn column(&self, f: impl Fn(&RunRecord) -> f64) -> Vec<f64> {
        self.runs.iter().map(f).collect()
    }

    pub fn test_ma(&self) -> Vec<f64> {
        self.column(|r| r.test.ma)
    }

    pub fn train_ma(&self) -> Vec<f64> {
        self.column(|r| r.train.ma)
    }

    pub fn test_recall(&self) -> Vec<f64> {
        self.column(|r| r.test.instance.recall)
    }

    pub fn test_f1(&self) -> Vec<f64> {
        self.column(|r| r.test.instance.f1)
    }

    pub fn mean_test_ma(&self) -> f64 {
        mean_sd(&self.test_ma()).0
    }

    pub fn mean_train_ma(&self) -> f64 {
        mean_sd(&self.train_ma()).0
    }
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub arms: Vec<ArmSummary>,
    /// Index into `arms` of the arm paired differences refer to.
    pub reference: Option<usize>,
}

impl Comparison {
    pub fn arm(&self, label: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm.label == label)
    }

    pub fn rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for a in &self.arms {
            for (j, r) in a.runs.iter().enumerate() {
                let d = |v: &Option<Vec<f64>>| v.as_ref().map_or(String::new(), |v| real(v[j]));
                let (off, on, null) = r.mi.as_ref().map_or((String::new(), String::new(), String::new()), |m| {
                    (real(m.mean_off_target()), real(m.mean_on_target()), real(m.max_null()))
                });
                rows.push(format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    a.arm.label,
                    a.arm.mode,
                    a.arm.ndsi,
                    a.seeds[j],
                    real(r.train.ma),
                    real(r.test.ma),
                    real(r.test.instance.precision),
                    real(r.test.instance.recall),
                    real(r.test.instance.f1),
                    d(&a.diff_ma),
                    d(&a.diff_recall),
                    d(&a.diff_f1),
                    off,
                    on,
                    null,
                    real(r.anchors.mean_abs_off_diagonal()),
                    r.trained.steps
                ));
            }
        }
        rows
    }

    pub fn summary_rows(&self) -> Vec<String> {
        self.arms
            .iter()
            .map(|a| {
                let (tr, _) = mean_sd(&a.train_ma());
                let (ma, ma_sd) = mean_sd(&a.test_ma());
                let (rc, rc_sd) = mean_sd(&a.test_recall());
                let (f1, f1_sd) = mean_sd(&a.test_f1());
                let (dm, dm_sd) = a
                    .diff_ma
                    .as_ref()
                    .map_or((String::new(), String::new()), |v| {
                        let (m, s) = mean_sd(v);
                        (real(m), real(s))
                    });
                format!(
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    a.arm.label,
                    a.runs.len(),
                    real(tr),
                    real(ma),
                    real(ma_sd),
                    real(rc),
                    real(rc_sd),
                    real(f1),
                    real(f1_sd),
                    dm,
                    dm_sd
                )
            })
            .collect()
    }
}

/// Trains every `(arm, seed)` pair on a pool of `threads` workers.
///
/// Results are ordered by arm, then seed, regardless of completion order.
/// Paired differences refer to the first baseline arm, if any.
pub fn run_arms(base: &RunConfig, arms: &[Arm], seeds: &[u64], threads: usize) -> Result<Comparison> {
    if arms.is_empty() || seeds.is_empty() {
        return Err(Error::contract("at least one arm and one seed are required"));
    }
    base.validate()?;
    let jobs: Vec<(usize, u64)> = (0..arms.len())
        .flat_map(|a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::contract(format!("cannot build worker pool: {e}")))?;
    let results: Vec<Result<RunRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(a, s)| train_run(&arms[a].config(base, s)))
            .collect()
    });
    let mut records = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter();

    let mut summaries: Vec<ArmSummary> = arms
        .iter()
        .map(|arm| ArmSummary {
            arm: arm.clone(),
            seeds: seeds.to_vec(),
            runs: records.by_ref().take(seeds.len()).collect(),
            diff_ma: None,
            diff_recall: None,
            diff_f1: None,
        })
        .collect();
    let reference = arms.iter().position(|a| a.mode == Mode::Baseline);
    if let Some(r) = reference {
        let (ma, rc, f1) = (
            summaries[r].test_ma(),
            summaries[r].test_recall(),
            summaries[r].test_f1(),
        );
        let diff = |a: Vec<f64>, b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect();
        for s in &mut summaries {
            s.diff_ma = Some(diff(s.test_ma(), &ma));
            s.diff_recall = Some(diff(s.test_recall(), &rc));
            s.diff_f1 = Some(diff(s.test_f1(), &f1));
        }
    }
    Ok(Comparison {
        arms: summaries,
        reference,
    })
}

/// One arm per mode, each with the base config's NDSI setting.
pub fn compare_modes(base: &RunConfig, modes: &[Mode], seeds: &[u64], threads: usize) -> Result<Comparison> {
    let arms: Vec<Arm> = modes.iter().map(|&m| Arm::new(m, base.ndsi)).collect();
    run_arms(base, &arms, seeds, threads)
}

/// eq3 and eq4, each with and without NDSI.
pub fn ablate_ndsi(base: &RunConfig, seeds: &[u64], threads: usize) -> Result<Comparison> {
    if base.data.norm_jitter <= 0.0 {
        return Err(Error::config(
            "data.norm_jitter",
            "the NDSI ablation needs norm_jitter > 0",
        ));
    }
    let arms = [
        Arm::new(Mode::Eq3, true),
        Arm::new(Mode::Eq3, false),
        Arm::new(Mode::Eq4, true),
        Arm::new(Mode::Eq4, false),
    ];
    run_arms(base, &arms, seeds, threads)
}

/// Writes `comparison.csv`, `summary.csv` and one run directory per
/// `(arm, seed)` under `dir/<arm>/seed-<seed>`.
pub fn write_comparison(dir: &Path, cmp: &Comparison) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("comparison.csv"), csv(COMPARE_HEADER, &cmp.rows()))?;
    fs::write(dir.join("summary.csv"), csv(SUMMARY_HEADER, &cmp.summary_rows()))?;
    for a in &cmp.arms {
        for (seed, run) in a.seeds.iter().zip(&a.runs) {
            write_run(&dir.join(&a.arm.label).join(format!("seed-{seed}")), run)?;
        }
    }
    Ok(())
}

/// Mean per-attribute test accuracy over the exclusive group.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustRow {
    pub seed: u64,
    pub ours: f64,
    pub robust_a: f64,
    pub robust_b: f64,
    /// Training samples the head skipped for violating exclusivity.
    pub excluded: usize,
}

fn group_accuracy(preds: &[Vec<u8>], labels: &[Vec<u8>], group: &[usize]) -> Result<f64> {
    let (_, per) = attribute_metrics(preds, labels)?;
    Ok(group.iter().map(|&g| per[g].accuracy).sum::<f64>() / group.len() as f64)
}

/// Trains `config` once per seed and compares plain thresholding of the
/// group with Robust-A (a softmax head on frozen train features) and
/// Robust-B (argmax rectification).
/// The group members' own features side by side, `[n, |group| * K]`.
///
/// The summed feature would also carry the other attributes' features and
/// let the head pick their co-occurrence back up.
pub fn group_features(params: &ModelParams, x: &Tensor, group: &[usize]) -> Result<Tensor> {
    let parts = params.features(x)?.parts;
    let (n, k) = (x.rows(), params.dims().hybrid);
    let mut data = Vec::with_capacity(n * k * group.len());
    for i in 0..n {
        for &s in group {
            data.extend_from_slice(parts[s].row(i));
        }
    }
    Tensor::matrix(n, k * group.len(), data)
}

pub fn robust_experiment(config: &RunConfig, seeds: &[u64], head: &HeadConfig) -> Result<Vec<RobustRow>> {
    let group = config.data.exclusive_group.clone();
    if group.is_empty() {
        return Err(Error::config("data.exclusive_group", "the robust experiment needs a group"));
    }
    let (train, test) = super::generate_data(config)?;
    let all = |n: usize| (0..n).collect::<Vec<_>>();
    let x_train = train.inputs(&all(train.len()));
    let x_test = test.inputs(&all(test.len()));
    let (train_labels, test_labels) = (train.labels(), test.labels());
    seeds
        .iter()
        .map(|&seed| {
            let mut c = config.clone();
            c.seed = seed;
            let trained = super::fit(&c, &train)?;
            let p = &trained.params;
            let post = p.predict(&x_test)?;
            let t = c.threshold;
            let ours = crate::analysis::binarize(&post, t);
            let b = robust_b_rectify(&post, &group, t)?;
            let head = robust_a_head(&group_features(p, &x_train, &group)?, &train_labels, &group, head)?;
            let a = head.rectify(&post, &group_features(p, &x_test, &group)?, t)?;
            Ok(RobustRow {
                seed,
                ours: group_accuracy(&ours, &test_labels, &group)?,
                robust_a: group_accuracy(&a, &test_labels, &group)?,
                robust_b: group_accuracy(&b, &test_labels, &group)?,
                excluded: head.excluded,
            })
        })
        .collect()
}

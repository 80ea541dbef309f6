//! Training loops, seeded comparisons and run artifacts.

mod artifacts;
mod config;
mod experiments;

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;

pub use artifacts::{
    analyze_dir, audit_dir, config_hash, read_predictions, recompute_artifacts, write_run,
    AuditReport, Predictions, ARTIFACT_FILES, HISTORY_HEADER, SHIFT_HEADER,
};
pub use config::{
    DataConfig, DebugConfig, Mode, ModelConfig, OptimConfig, Pair, ProbeSettings, RunConfig,
    TrainConfig,
};
pub use experiments::{
    ablate_ndsi, compare_modes, group_features, robust_experiment, run_arms, write_comparison, Arm, ArmSummary,
    Comparison, RobustRow, COMPARE_HEADER, SUMMARY_HEADER,
};

use crate::analysis::{evaluate_posteriors, mi_table, MetricsReport, MiTable, ProbeConfig};
use crate::datagen::{
    correlation_shift, derive_seed, make_shifted_splits, pearson_matrix, rng_from, Dataset,
    PairShift, PearsonReport,
};
use crate::disentangle::{draw_transforms, evaluate, BranchCounts, TransformDraw};
use crate::error::{Error, Result};
use crate::model::{anchor_cosine_matrix, AnchorReport, ModelParams};
use crate::numcore::{AdamState, Tensor};

const TAG_INIT: u64 = 0x1417;
const TAG_SHUFFLE: u64 = 0x5f;
const TAG_DRAW: u64 = 0xd2;
const TAG_MIX: u64 = 0x31;
const TAG_PROBE: u64 = 0x9b;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub steps: usize,
    pub counts: BranchCounts,
    /// `(i, s)` pairs whose label agreed with the drawn partner's.
    pub equal_label_pairs: u64,
}

/// Parameters and trace of a finished optimisation.
#[derive(Clone, Debug)]
pub struct Trained {
    pub initial: ModelParams,
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    pub step_losses: Vec<f64>,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct ShiftSummary {
    pub train: PearsonReport,
    pub test: PearsonReport,
    pub pairs: Vec<PairShift>,
}

impl ShiftSummary {
    pub fn from_labels(train: &[Vec<u8>], test: &[Vec<u8>]) -> Result<Self> {
        let train = pearson_matrix(train)?;
        let test = pearson_matrix(test)?;
        let pairs = correlation_shift(&train.matrix, &test.matrix)?;
        Ok(Self { train, test, pairs })
    }
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub trained: Trained,
    pub train: MetricsReport,
    pub test: MetricsReport,
    pub train_labels: Vec<Vec<u8>>,
    pub test_labels: Vec<Vec<u8>>,
    pub train_posteriors: Tensor,
    pub test_posteriors: Tensor,
    pub anchors: AnchorReport,
    pub mi: Option<MiTable>,
    pub shift: ShiftSummary,
    /// Not written to any artifact, so that reruns stay byte-identical.
    pub wall_clock: Duration,
}

pub fn generate_data(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = config.scenes()?;
    make_shifted_splits(&train, &test, config.data.n_train, config.data.n_test, config.data_seed())
}

fn mixup_inputs(x: &Tensor, t: &Tensor, seed: u64) -> Result<(Tensor, Tensor)> {
    let n = x.rows();
    let d = draw_transforms(n, 1, seed)?;
    let mix = |m: &Tensor| -> Result<Tensor> {
        let k = m.cols();
        let mut out = Vec::with_capacity(n * k);
        for i in 0..n {
            let (a, r) = (d.alpha[i][0], d.partner[i][0]);
            out.extend(m.row(i).iter().zip(m.row(r)).map(|(u, v)| a * u + (1.0 - a) * v));
        }
        Tensor::matrix(n, k, out)
    };
    Ok((mix(x)?, mix(t)?))
}

fn equal_label_pairs(t: &Tensor, draws: &TransformDraw) -> u64 {
    let mut count = 0;
    for i in 0..t.rows() {
        for s in 0..t.cols() {
            count += (t.get(i, s) == t.get(draws.partner[i][s], s)) as u64;
        }
    }
    count
}

/// Optimises a freshly initialised model on `train`.
pub fn fit(config: &RunConfig, train: &Dataset) -> Result<Trained> {
    config.validate()?;
    let dims = config.dims();
    if train.input_dim() != dims.input || train.num_attributes() != dims.attributes {
        return Err(Error::dim("training data does not match the configured dimensions"));
    }
    let seed = config.seed;
    let initial = ModelParams::init(dims, derive_seed(seed, &[TAG_INIT]))?;
    let mut params = initial.clone();
    let mut adam = AdamState::new(config.optim.adam(), &params.tensors());
    let objective = config.mode.objective();
    let opts = config.loss_options();
    let min_batch = if config.mode == Mode::Baseline { 1 } else { 2 };

    let mut history = Vec::with_capacity(config.train.epochs);
    let mut step_losses = Vec::new();
    let n = train.len();
    for epoch in 0..config.train.epochs {
        let lr = config.optim.lr_at(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from(derive_seed(seed, &[TAG_SHUFFLE, epoch as u64])));
        let mut stats = EpochStats {
            epoch,
            lr,
            mean_loss: 0.0,
            steps: 0,
            counts: BranchCounts::default(),
            equal_label_pairs: 0,
        };
        let mut total = 0.0;
        for (step, idx) in order.chunks(config.train.batch_size).enumerate() {
            if idx.len() < min_batch {
                continue;
            }
            let tags = [epoch as u64, step as u64];
            let mut x = train.inputs(idx);
            let mut t = train.targets(idx);
            if config.mode == Mode::MixupInput {
                (x, t) = mixup_inputs(&x, &t, derive_seed(seed, &[TAG_MIX, tags[0], tags[1]]))?;
            }
            let draws = if objective.uses_transform() {
                Some(if config.debug.degenerate_draws {
                    TransformDraw::degenerate(idx.len(), dims.attributes)?
                } else {
                    draw_transforms(
                        idx.len(),
                        dims.attributes,
                        derive_seed(seed, &[TAG_DRAW, tags[0], tags[1]]),
                    )?
                })
            } else {
                None
            };
            let ev = evaluate(&params, &x, &t, draws.as_ref(), objective, &opts).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, step {step}: {m}")),
                other => other,
            })?;
            if !ev.loss.is_finite() || ev.grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, step {step}: loss {}",
                    ev.loss
                )));
            }
            if let Some(d) = &draws {
                stats.equal_label_pairs += equal_label_pairs(&t, d);
            }
            stats.counts.add(ev.counts);
            adam.step_with_lr(&mut params.tensors_mut(), &ev.grads, lr)?;
            total += ev.loss;
            stats.steps += 1;
            step_losses.push(ev.loss);
        }
        stats.mean_loss = if stats.steps > 0 { total / stats.steps as f64 } else { 0.0 };
        history.push(stats);
    }
    Ok(Trained {
        initial,
        params,
        history,
        step_losses,
        steps: adam.step_count(),
    })
}

pub fn probe_config(config: &RunConfig) -> ProbeConfig {
    ProbeConfig {
        bins: config.probe.bins,
        steps: config.probe.steps,
        lr: config.probe.lr,
    }
}

/// MI table of the model's test features, or `None` when probes are off.
pub fn probe_features(config: &RunConfig, params: &ModelParams, test: &Dataset) -> Result<Option<MiTable>> {
    if !config.probe.enabled {
        return Ok(None);
    }
    let all: Vec<usize> = (0..test.len()).collect();
    let features = params.features(&test.inputs(&all))?;
    Ok(Some(mi_table(
        &features,
        &test.labels(),
        &probe_config(config),
        derive_seed(config.seed, &[TAG_PROBE]),
    )?))
}

/// Trains one model and evaluates every diagnostic.
pub fn train_run(config: &RunConfig) -> Result<RunRecord> {
    let start = Instant::now();
    config.validate()?;
    let (train, test) = generate_data(config)?;
    let trained = fit(config, &train)?;
    let params = &trained.params;
    let all = |d: &Dataset| (0..d.len()).collect::<Vec<_>>();
    let train_posteriors = params.predict(&train.inputs(&all(&train)))?;
    let test_posteriors = params.predict(&test.inputs(&all(&test)))?;
    let train_labels = train.labels();
    let test_labels = test.labels();
    let mi = probe_features(config, params, &test)?;
    Ok(RunRecord {
        config: config.clone(),
        config_hash: config_hash(config),
        seed: config.seed,
        train: evaluate_posteriors(&train_posteriors, &train_labels, config.threshold)?,
        test: evaluate_posteriors(&test_posteriors, &test_labels, config.threshold)?,
        anchors: anchor_cosine_matrix(params),
        mi,
        shift: ShiftSummary::from_labels(&train_labels, &test_labels)?,
        train_labels,
        test_labels,
        train_posteriors,
        test_posteriors,
        trained,
        wall_clock: start.elapsed(),
    })
}

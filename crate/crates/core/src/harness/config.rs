//! Run configuration, read from TOML.
//!
//! Every field has a default, and unknown keys are rejected. The defaults
//! describe the shifted-split benchmark. Example:
//!
//! ```toml
//! seed = 3
//! mode = "eq4"            # baseline | eq3 | eq4 | mixup_input
//!
//! [data]
//! n_train = 8000
//! noise_sigma = 0.15
//! train_pairs = [[0, 1, 0.97], [2, 3, 0.97]]
//! # test_pairs defaults to train_pairs with flipped signs
//!
//! [optim]
//! lr = 1e-3
//! milestones = [40, 50]   # epochs
//!
//! [train]
//! epochs = 60
//! batch_size = 64
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{derive_seed, SceneSpec};
use crate::disentangle::{LossOptions, Objective};
use crate::error::{Error, Result};
use crate::model::Dims;
use crate::numcore::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Eq3,
    Eq4,
    /// Baseline objective on inputs and labels mixed with one partner.
    MixupInput,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::Eq3, Mode::Eq4, Mode::MixupInput];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Eq3 => "eq3",
            Mode::Eq4 => "eq4",
            Mode::MixupInput => "mixup_input",
        }
    }

    pub fn objective(self) -> Objective {
        match self {
            Mode::Baseline | Mode::MixupInput => Objective::Baseline,
            Mode::Eq3 => Objective::Eq3,
            Mode::Eq4 => Objective::Eq4,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown mode `{s}`")))
    }
}

pub type Pair = (usize, usize, f64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Dataset seed; derived from the run seed when absent.
    pub seed: Option<u64>,
    pub input_dim: usize,
    pub marginals: Vec<f64>,
    /// Latent correlations `(i, j, r)` of the training scene.
    pub train_pairs: Vec<Pair>,
    /// Latent correlations of the test scene; sign-flipped `train_pairs`
    /// when absent.
    pub test_pairs: Option<Vec<Pair>>,
    pub style_seed: u64,
    pub noise_sigma: f64,
    pub norm_jitter: f64,
    /// Mutually exclusive attributes (empty = none).
    pub exclusive_group: Vec<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 8000,
            n_test: 4000,
            seed: None,
            input_dim: 64,
            marginals: (0..8).map(|s| 0.1 + 0.8 * s as f64 / 7.0).collect(),
            train_pairs: vec![(0, 1, 0.97), (2, 3, 0.97), (4, 5, 0.97), (6, 7, 0.97)],
            test_pairs: None,
            style_seed: 1234,
            noise_sigma: 0.15,
            norm_jitter: 0.3,
            exclusive_group: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hybrid: usize,
    pub hidden: usize,
    pub classifier_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = Dims::default();
        Self {
            hybrid: d.hybrid,
            hidden: d.hidden,
            classifier_hidden: d.classifier_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs at which the learning rate is divided by `decay`.
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            milestones: vec![40, 50],
            decay: 10.0,
        }
    }
}

impl OptimConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr / self.decay.powi(passed as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSettings {
    pub enabled: bool,
    pub bins: usize,
    pub steps: usize,
    pub lr: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        let p = crate::analysis::ProbeConfig::default();
        Self {
            enabled: true,
            bins: p.bins,
            steps: p.steps,
            lr: p.lr,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DebugConfig {
    /// Replace every transform draw with `alpha = beta = 1`.
    pub degenerate_draws: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    pub lambda: f64,
    pub ndsi: bool,
    pub eq4_clean_weight: f64,
    pub threshold: f64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub probe: ProbeSettings,
    pub debug: DebugConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Eq4,
            lambda: 1.0,
            ndsi: true,
            eq4_clean_weight: 0.0,
            threshold: 0.5,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeSettings::default(),
            debug: DebugConfig::default(),
        }
    }
}

fn field(path: &str, ok: bool, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(path, message))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("", e.to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn dims(&self) -> Dims {
        Dims {
            input: self.data.input_dim,
            attributes: self.data.marginals.len(),
            hybrid: self.model.hybrid,
            hidden: self.model.hidden,
            classifier_hidden: self.model.classifier_hidden,
        }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            lambda: self.lambda,
            ndsi: self.ndsi,
            eq4_clean_weight: self.eq4_clean_weight,
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data
            .seed
            .unwrap_or_else(|| derive_seed(self.seed, &[0xda7a]))
    }

    pub fn test_pairs(&self) -> Vec<Pair> {
        self.data.test_pairs.clone().unwrap_or_else(|| {
            self.data
                .train_pairs
                .iter()
                .map(|&(i, j, r)| (i, j, -r))
                .collect()
        })
    }

    /// Builds the train and test scenes, reporting failures with a field path.
    pub fn scenes(&self) -> Result<(SceneSpec, SceneSpec)> {
        let d = &self.data;
        let build = |pairs: &[Pair], path: &str| -> Result<SceneSpec> {
            let spec = SceneSpec::with_pairs(
                d.marginals.clone(),
                pairs,
                d.input_dim,
                d.style_seed,
                d.noise_sigma,
                d.norm_jitter,
            )
            .map_err(|e| Error::config(path, e.to_string()))?;
            if d.exclusive_group.is_empty() {
                Ok(spec)
            } else {
                spec.with_exclusive_group(d.exclusive_group.clone())
                    .map_err(|e| Error::config("data.exclusive_group", e.to_string()))
            }
        };
        Ok((
            build(&d.train_pairs, "data.train_pairs")?,
            build(&self.test_pairs(), "data.test_pairs")?,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        field("lambda", self.lambda >= 0.0 && self.lambda.is_finite(), "must be a finite value >= 0")?;
        field(
            "eq4_clean_weight",
            self.eq4_clean_weight >= 0.0 && self.eq4_clean_weight.is_finite(),
            "must be a finite value >= 0",
        )?;
        field("threshold", self.threshold > 0.0 && self.threshold < 1.0, "must lie in (0, 1)")?;
        field("data.n_train", self.data.n_train >= 2, "must be at least 2")?;
        field("data.n_test", self.data.n_test >= 1, "must be positive")?;
        field("data.input_dim", self.data.input_dim > 0, "must be positive")?;
        field("data.marginals", !self.data.marginals.is_empty(), "needs at least one attribute")?;
        field("model.hybrid", self.model.hybrid > 0, "must be positive")?;
        field("model.hidden", self.model.hidden > 0, "must be positive")?;
        field("model.classifier_hidden", self.model.classifier_hidden > 0, "must be positive")?;
        field("optim.lr", self.optim.lr >= 0.0 && self.optim.lr.is_finite(), "must be a finite value >= 0")?;
        field("optim.beta1", (0.0..1.0).contains(&self.optim.beta1), "must lie in [0, 1)")?;
        field("optim.beta2", (0.0..1.0).contains(&self.optim.beta2), "must lie in [0, 1)")?;
        field("optim.eps", self.optim.eps > 0.0, "must be positive")?;
        field("optim.decay", self.optim.decay > 0.0 && self.optim.decay.is_finite(), "must be positive")?;
        field(
            "optim.milestones",
            self.optim.milestones.windows(2).all(|w| w[0] < w[1]),
            "must be strictly increasing",
        )?;
        field("train.epochs", self.train.epochs > 0, "must be positive")?;
        let min_batch = if self.mode == Mode::Baseline { 1 } else { 2 };
        field(
            "train.batch_size",
            self.train.batch_size >= min_batch,
            format!("must be at least {min_batch} in mode {}", self.mode),
        )?;
        field("probe.bins", self.probe.bins >= 2, "must be at least 2")?;
        field(
            "probe.enabled",
            !self.probe.enabled || self.data.n_test >= 100,
            "MI probes need data.n_test >= 100",
        )?;
        self.scenes()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.data.seed = Some(11);
        c.optim.lr = 0.1 + 0.2;
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = RunConfig::from_toml("[optim]\nlearning_rate = 0.1\n").unwrap_err();
        match err {
            Error::Config { path, message } => {
                assert_eq!(path, "optim.learning_rate");
                assert!(message.contains("learning_rate"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_values_report_paths() {
        let cases = [
            ("[optim]\nmilestones = [5, 3]\n", "optim.milestones"),
            ("mode = \"eq4\"\n[train]\nbatch_size = 1\n", "train.batch_size"),
            ("[data]\nmarginals = [0.5, 1.5]\ntrain_pairs = []\n", "data.train_pairs"),
            ("[train]\nepochs = \"many\"\n", "train.epochs"),
        ];
        for (text, want) in cases {
            match RunConfig::from_toml(text).unwrap_err() {
                Error::Config { path, .. } => assert_eq!(path, want, "{text}"),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn schedule_divides_at_milestones() {
        let o = OptimConfig {
            lr: 1.0,
            milestones: vec![2, 4],
            ..Default::default()
        };
        let lrs: Vec<f64> = (0..6).map(|e| o.lr_at(e)).collect();
        assert_eq!(lrs, vec![1.0, 1.0, 0.1, 0.1, 0.01, 0.01]);
    }

    #[test]
    fn test_pairs_default_to_flipped() {
        let c = RunConfig::default();
        assert!(c
            .test_pairs()
            .iter()
            .zip(&c.data.train_pairs)
            .all(|(t, r)| t.2 == -r.2 && (t.0, t.1) == (r.0, r.1)));
    }
}

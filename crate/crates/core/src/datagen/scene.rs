use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generative recipe for one synthetic split.
///
/// Labels come from a Gaussian copula whose latent correlation is
/// `target_corr`; the binary correlation it induces is attenuated relative to
/// the latent one. Inputs are sums of per-attribute style vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    marginals: Vec<f64>,
    target_corr: Vec<Vec<f64>>,
    input_dim: usize,
    style_seed: u64,
    noise_sigma: f64,
    norm_jitter: f64,
    exclusive_group: Option<Vec<usize>>,
    #[serde(skip)]
    cholesky: Vec<f64>,
}

impl SceneSpec {
    pub fn new(
        marginals: Vec<f64>,
        target_corr: Vec<Vec<f64>>,
        input_dim: usize,
        style_seed: u64,
        noise_sigma: f64,
        norm_jitter: f64,
    ) -> Result<Self> {
        let mut spec = Self {
            marginals,
            target_corr,
            input_dim,
            style_seed,
            noise_sigma,
            norm_jitter,
            exclusive_group: None,
            cholesky: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Identity latent correlation plus the listed symmetric pairs.
    pub fn with_pairs(
        marginals: Vec<f64>,
        pairs: &[(usize, usize, f64)],
        input_dim: usize,
        style_seed: u64,
        noise_sigma: f64,
        norm_jitter: f64,
    ) -> Result<Self> {
        let c = marginals.len();
        let mut corr = identity(c);
        for &(i, j, r) in pairs {
            if i >= c || j >= c || i == j {
                return Err(Error::contract(format!(
                    "correlated pair ({i}, {j}) is not a valid off-diagonal pair for {c} attributes"
                )));
            }
            corr[i][j] = r;
            corr[j][i] = r;
        }
        Self::new(marginals, corr, input_dim, style_seed, noise_sigma, norm_jitter)
    }

    /// Makes the listed attributes mutually exclusive: exactly one of them is
    /// active per sample, chosen through the latent of the first member, with
    /// the members' marginals as category probabilities (they must sum to 1).
    pub fn with_exclusive_group(mut self, group: Vec<usize>) -> Result<Self> {
        self.exclusive_group = Some(group);
        self.validate()?;
        Ok(self)
    }

    pub fn num_attributes(&self) -> usize {
        self.marginals.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginals
    }

    pub fn target_corr(&self) -> &[Vec<f64>] {
        &self.target_corr
    }

    pub fn style_seed(&self) -> u64 {
        self.style_seed
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn norm_jitter(&self) -> f64 {
        self.norm_jitter
    }

    pub fn exclusive_group(&self) -> Option<&[usize]> {
        self.exclusive_group.as_deref()
    }

    /// Lower-triangular Cholesky factor of `target_corr`, row-major.
    pub(crate) fn cholesky(&self) -> &[f64] {
        &self.cholesky
    }

    /// Same spec with a different latent correlation.
    pub fn with_target_corr(&self, target_corr: Vec<Vec<f64>>) -> Result<Self> {
        let mut s = self.clone();
        s.target_corr = target_corr;
        s.validate()?;
        Ok(s)
    }

    pub fn with_noise(&self, noise_sigma: f64, norm_jitter: f64) -> Result<Self> {
        let mut s = self.clone();
        s.noise_sigma = noise_sigma;
        s.norm_jitter = norm_jitter;
        s.validate()?;
        Ok(s)
    }

    /// Checks every invariant and caches the Cholesky factor.
    pub fn validate(&mut self) -> Result<()> {
        let c = self.marginals.len();
        if c == 0 {
            return Err(Error::contract("a scene needs at least one attribute"));
        }
        if self.input_dim == 0 {
            return Err(Error::contract("input_dim must be positive"));
        }
        for (s, &p) in self.marginals.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Domain(format!(
                    "marginal {s} = {p} is outside (0, 1)"
                )));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Domain("noise_sigma must be a finite value >= 0".into()));
        }
        if !(self.norm_jitter >= 0.0 && self.norm_jitter.is_finite()) {
            return Err(Error::Domain("norm_jitter must be a finite value >= 0".into()));
        }
        if self.target_corr.len() != c || self.target_corr.iter().any(|r| r.len() != c) {
            return Err(Error::dim(format!("target_corr must be {c}x{c}")));
        }
        for i in 0..c {
            if self.target_corr[i][i] != 1.0 {
                return Err(Error::Domain(format!(
                    "target_corr diagonal entry {i} is {}, expected 1",
                    self.target_corr[i][i]
                )));
            }
            for j in 0..i {
                let (a, b) = (self.target_corr[i][j], self.target_corr[j][i]);
                if a != b {
                    return Err(Error::Domain(format!(
                        "target_corr is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
                if !(a > -1.0 && a < 1.0) {
                    return Err(Error::Domain(format!(
                        "target_corr ({i}, {j}) = {a} is outside (-1, 1)"
                    )));
                }
            }
        }
        if let Some(group) = &self.exclusive_group {
            if group.len() < 2 {
                return Err(Error::contract("an exclusive group needs at least 2 members"));
            }
            let mut seen = vec![false; c];
            for &g in group {
                if g >= c || seen[g] {
                    return Err(Error::contract(format!(
                        "exclusive group member {g} is out of range or repeated"
                    )));
                }
                seen[g] = true;
            }
            let total: f64 = group.iter().map(|&g| self.marginals[g]).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "exclusive group marginals sum to {total}, expected 1"
                )));
            }
        }
        self.cholesky = cholesky_or_report(&self.target_corr)?;
        Ok(())
    }

    /// Checks that `other` differs from `self` at most in `target_corr`.
    pub fn ensure_correlation_only_shift(&self, other: &SceneSpec) -> Result<()> {
        let mismatch = |what: &str| {
            Err(Error::contract(format!(
                "train and test scenes differ in {what}; only target_corr may change"
            )))
        };
        if self.num_attributes() != other.num_attributes() {
            return mismatch("attribute count");
        }
        if self.input_dim != other.input_dim {
            return mismatch("input_dim");
        }
        if self.style_seed != other.style_seed {
            return mismatch("style_seed");
        }
        if self.marginals != other.marginals {
            return mismatch("marginals");
        }
        if self.noise_sigma != other.noise_sigma || self.norm_jitter != other.norm_jitter {
            return mismatch("noise settings");
        }
        if self.exclusive_group != other.exclusive_group {
            return mismatch("exclusive group");
        }
        Ok(())
    }
}

pub(crate) fn identity(c: usize) -> Vec<Vec<f64>> {
    (0..c)
        .map(|i| (0..c).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn cholesky_or_report(corr: &[Vec<f64>]) -> Result<Vec<f64>> {
    let c = corr.len();
    let m = DMatrix::from_fn(c, c, |i, j| corr[i][j]);
    match m.clone().cholesky() {
        Some(ch) => {
            let l = ch.l();
            let mut out = vec![0.0; c * c];
            for i in 0..c {
                for j in 0..=i {
                    out[i * c + j] = l[(i, j)];
                }
            }
            Ok(out)
        }
        None => {
            let eig = SymmetricEigen::new(m);
            let smallest = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            Err(Error::NotPositiveDefinite {
                eigenvalue: smallest,
            })
        }
    }
}

//! Synthetic multi-attribute datasets with controllable label co-occurrence.
//!
//! Labels are drawn through a Gaussian copula, inputs are rendered as a noisy
//! sum of per-attribute style vectors, and train/test splits may differ only
//! in their latent label correlation. The module also provides the
//! label-correlation diagnostics (Pearson matrices and sorted shifts).

mod correlation;
mod io;
mod scene;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub use correlation::{correlation_shift, fraction_at_least, pearson_matrix, PairShift, PearsonReport};
pub use io::{read_dataset, write_dataset};
pub use scene::SceneSpec;


/// One labelled input.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    spec: Option<SceneSpec>,
    split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, spec: Option<SceneSpec>, split: Split) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::contract("a dataset must not be empty"))?;
        let (d, c) = (first.x.len(), first.labels.len());
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != d || s.labels.len() != c {
                return Err(Error::dim(format!(
                    "sample {i} has shape ({}, {}), expected ({d}, {c})",
                    s.x.len(),
                    s.labels.len()
                )));
            }
            if s.labels.iter().any(|&l| l > 1) {
                return Err(Error::Domain(format!("sample {i} has a non-binary label")));
            }
        }
        if let Some(sp) = &spec {
            if sp.input_dim() != d || sp.num_attributes() != c {
                return Err(Error::dim("samples disagree with their scene spec"));
            }
        }
        Ok(Self {
            samples,
            spec,
            split,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn spec(&self) -> Option<&SceneSpec> {
        self.spec.as_ref()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples[0].x.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.samples[0].labels.len()
    }

    pub fn labels(&self) -> Vec<Vec<u8>> {
        self.samples.iter().map(|s| s.labels.clone()).collect()
    }

    /// Inputs of the selected samples as an `[n, D]` matrix.
    pub fn inputs(&self, idx: &[usize]) -> Tensor {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.samples[i].x);
        }
        Tensor::matrix(idx.len(), d, data).expect("non-empty selection")
    }

    /// Labels of the selected samples as an `[n, C]` matrix of 0/1 values.
    pub fn targets(&self, idx: &[usize]) -> Tensor {
        let c = self.num_attributes();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend(self.samples[i].labels.iter().map(|&l| l as f64));
        }
        Tensor::matrix(idx.len(), c, data).expect("non-empty selection")
    }
}

/// Mixes a base seed with tags into an independent 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix(base);
    for &t in tags {
        h = splitmix(h ^ splitmix(t.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Draws `n` label vectors from the scene's Gaussian copula.
///
/// Sample `i` uses its own stream derived from `(seed, i)`, so the result
/// does not depend on how generation is partitioned.
pub fn sample_labels(spec: &SceneSpec, n: usize, seed: u64) -> Result<Vec<Vec<u8>>> {
    if n == 0 {
        return Err(Error::contract("sample_labels needs n >= 1"));
    }
    let sampler = LabelSampler::new(spec);
    Ok((0..n)
        .map(|i| sampler.draw(&mut rng_from(derive_seed(seed, &[i as u64]))))
        .collect())
}

struct LabelSampler<'a> {
    spec: &'a SceneSpec,
    thresholds: Vec<f64>,
    normal: Normal,
}

impl<'a> LabelSampler<'a> {
    fn new(spec: &'a SceneSpec) -> Self {
        let normal = std_normal();
        let thresholds = spec
            .marginals()
            .iter()
            .map(|&p| normal.inverse_cdf(p))
            .collect();
        Self {
            spec,
            thresholds,
            normal,
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Vec<u8> {
        let c = self.spec.num_attributes();
        let e: Vec<f64> = (0..c).map(|_| StandardNormal.sample(rng)).collect();
        let l = self.spec.cholesky();
        let z: Vec<f64> = (0..c)
            .map(|i| (0..=i).map(|j| l[i * c + j] * e[j]).sum())
            .collect();
        let mut labels: Vec<u8> = z
            .iter()
            .zip(&self.thresholds)
            .map(|(&zi, &t)| u8::from(zi < t))
            .collect();
        if let Some(group) = self.spec.exclusive_group() {
            let u = self.normal.cdf(z[group[0]]);
            let mut cum = 0.0;
            let mut chosen = *group.last().expect("group has members");
            for &g in group {
                cum += self.spec.marginals()[g];
                if u < cum {
                    chosen = g;
                    break;
                }
            }
            for &g in group {
                labels[g] = u8::from(g == chosen);
            }
        }
        labels
    }
}

/// Per-attribute unit style vectors, fixed by the scene's style seed.
#[derive(Clone, Debug)]
pub struct StyleBank {
    styles: Vec<Vec<f64>>,
}

impl StyleBank {
    pub fn new(spec: &SceneSpec) -> Self {
        let mut rng = rng_from(derive_seed(spec.style_seed(), &[0x57_171e]));
        let d = spec.input_dim();
        let styles = (0..spec.num_attributes())
            .map(|_| loop {
                let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break v.into_iter().map(|a| a / norm).collect();
                }
            })
            .collect();
        Self { styles }
    }

    pub fn style(&self, s: usize) -> &[f64] {
        &self.styles[s]
    }

    pub fn len(&self) -> usize {
        self.styles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.styles.is_empty()
    }
}

/// A rendered input together with the per-attribute norm gains used.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub x: Vec<f64>,
    pub gains: Vec<f64>,
}

struct Renderer<'a> {
    spec: &'a SceneSpec,
    styles: StyleBank,
}

impl<'a> Renderer<'a> {
    fn new(spec: &'a SceneSpec) -> Self {
        Self {
            spec,
            styles: StyleBank::new(spec),
        }
    }

    fn render<R: Rng>(&self, labels: &[u8], rng: &mut R) -> Result<Rendered> {
        let c = self.spec.num_attributes();
        if labels.len() != c {
            return Err(Error::dim(format!(
                "render_input got {} labels for {c} attributes",
                labels.len()
            )));
        }
        let d = self.spec.input_dim();
        let jitter = self.spec.norm_jitter();
        let gains: Vec<f64> = (0..c)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                (jitter * z).exp()
            })
            .collect();
        let mut x = vec![0.0; d];
        for s in 0..c {
            if labels[s] == 1 {
                for (xi, st) in x.iter_mut().zip(self.styles.style(s)) {
                    *xi += gains[s] * st;
                }
            }
        }
        let sigma = self.spec.noise_sigma();
        for xi in &mut x {
            let e: f64 = StandardNormal.sample(rng);
            if sigma > 0.0 {
                *xi += sigma * e;
            }
        }
        Ok(Rendered { x, gains })
    }
}

/// Renders `x = Σ_s a_s g_s style_s + ε` for one label vector.
pub fn render_input(labels: &[u8], spec: &SceneSpec, seed: u64) -> Result<Vec<f64>> {
    render_detailed(labels, spec, seed).map(|r| r.x)
}

/// Like [`render_input`] but also returns the per-attribute gains `g_s`.
pub fn render_detailed(labels: &[u8], spec: &SceneSpec, seed: u64) -> Result<Rendered> {
    Renderer::new(spec).render(labels, &mut rng_from(seed))
}

/// Generates one split of `n` samples.
pub fn generate(spec: &SceneSpec, n: usize, seed: u64, split: Split) -> Result<Dataset> {
    let labels = sample_labels(spec, n, derive_seed(seed, &[1]))?;
    let renderer = Renderer::new(spec);
    let samples = labels
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let mut rng = rng_from(derive_seed(seed, &[2, i as u64]));
            renderer.render(&a, &mut rng).map(|r| Sample { x: r.x, labels: a })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, Some(spec.clone()), split)
}

/// Train and test splits that differ only in their latent label correlation.
pub fn make_shifted_splits(
    train_spec: &SceneSpec,
    test_spec: &SceneSpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    train_spec.ensure_correlation_only_shift(test_spec)?;
    let train = generate(train_spec, n_train, derive_seed(seed, &[0x7a]), Split::Train)?;
    let test = generate(test_spec, n_test, derive_seed(seed, &[0x7e]), Split::Test)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(c: usize, d: usize, pairs: &[(usize, usize, f64)]) -> SceneSpec {
        SceneSpec::with_pairs(vec![0.5; c], pairs, d, 7, 0.0, 0.0).unwrap()
    }

    #[test]
    fn identical_seeds_give_identical_datasets() {
        let s = SceneSpec::with_pairs(vec![0.2, 0.5, 0.7], &[(0, 1, 0.6)], 12, 3, 0.3, 0.4)
            .unwrap();
        let a = generate(&s, 200, 11, Split::Train).unwrap();
        let b = generate(&s, 200, 11, Split::Train).unwrap();
        assert_eq!(a, b);
        let c = generate(&s, 200, 12, Split::Train).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prefix_of_labels_does_not_depend_on_n() {
        let s = spec(3, 12, &[(0, 2, 0.5)]);
        let short = sample_labels(&s, 10, 5).unwrap();
        let long = sample_labels(&s, 100, 5).unwrap();
        assert_eq!(short[..], long[..10]);
    }

    #[test]
    fn zero_labels_render_to_zero() {
        let s = spec(3, 12, &[]);
        let x = render_input(&[0, 0, 0], &s, 9).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_renders_exact_style() {
        let s = spec(3, 12, &[]);
        let bank = StyleBank::new(&s);
        for k in 0..3 {
            let mut a = vec![0u8; 3];
            a[k] = 1;
            let x = render_input(&a, &s, 4).unwrap();
            assert_eq!(x, bank.style(k));
        }
    }

    #[test]
    fn styles_are_unit_vectors() {
        let s = spec(4, 16, &[]);
        let bank = StyleBank::new(&s);
        for k in 0..4 {
            let n: f64 = bank.style(k).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jitter_changes_magnitude_not_direction() {
        let s = SceneSpec::with_pairs(vec![0.5; 2], &[], 8, 7, 0.0, 0.5).unwrap();
        let bank = StyleBank::new(&s);
        let r1 = render_detailed(&[1, 0], &s, 1).unwrap();
        let r2 = render_detailed(&[1, 0], &s, 2).unwrap();
        assert_ne!(r1.gains[0], r2.gains[0]);
        for r in [&r1, &r2] {
            let n: f64 = r.x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - r.gains[0]).abs() < 1e-12);
            for (xi, si) in r.x.iter().zip(bank.style(0)) {
                assert!((xi / r.gains[0] - si).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rendering_is_linear_in_labels_without_noise() {
        let s = spec(4, 16, &[]);
        let bank = StyleBank::new(&s);
        let a = [1u8, 0, 1, 0];
        let base = render_input(&a, &s, 3).unwrap();
        for k in [1, 3] {
            let mut b = a;
            b[k] = 1;
            let x = render_input(&b, &s, 3).unwrap();
            for ((xi, bi), st) in x.iter().zip(&base).zip(bank.style(k)) {
                assert!((xi - bi - st).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn render_rejects_wrong_label_count() {
        let s = spec(3, 12, &[]);
        assert!(render_input(&[1, 0], &s, 1).is_err());
    }

    #[test]
    fn exclusive_group_is_one_hot() {
        let s = SceneSpec::with_pairs(vec![0.2, 0.5, 0.3, 0.4], &[(0, 3, 0.5)], 16, 1, 0.0, 0.0)
            .unwrap()
            .with_exclusive_group(vec![0, 1, 2])
            .unwrap();
        let labels = sample_labels(&s, 5000, 3).unwrap();
        let mut counts = [0usize; 3];
        for a in &labels {
            assert_eq!(a[0] + a[1] + a[2], 1);
            for k in 0..3 {
                counts[k] += a[k] as usize;
            }
        }
        for (k, &p) in [0.2, 0.5, 0.3].iter().enumerate() {
            let emp = counts[k] as f64 / 5000.0;
            assert!((emp - p).abs() < 0.03, "group member {k}: {emp}");
        }
    }

    #[test]
    fn shifted_splits_reject_non_correlation_changes() {
        let a = spec(2, 8, &[(0, 1, 0.8)]);
        let b = SceneSpec::with_pairs(vec![0.5; 2], &[(0, 1, -0.8)], 8, 8, 0.0, 0.0).unwrap();
        assert!(matches!(
            make_shifted_splits(&a, &b, 10, 10, 1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn derived_seeds_differ_by_tag() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_ne!(derive_seed(1, &[0]), derive_seed(2, &[0]));
        assert_eq!(derive_seed(5, &[3, 4]), derive_seed(5, &[3, 4]));
    }
}

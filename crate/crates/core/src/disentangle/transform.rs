use rand::seq::SliceRandom;
use rand::Rng;

use crate::datagen::rng_from;
use crate::error::{Error, Result};
use crate::model::FeatureBundle;
use crate::numcore::{Tape, Tensor, Var};

/// Norms below this make the norm/direction split ill-defined; such pairs
/// use plain interpolation instead.
pub const EPS_NORM: f64 = 1e-8;

/// Per-sample, per-attribute randomness of the feature transform.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformDraw {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub partner: Vec<Vec<usize>>,
}

impl TransformDraw {
    /// `alpha = beta = 1` everywhere, which makes the transform the identity.
    pub fn degenerate(n: usize, c: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::contract("a transform needs a batch of at least 2"));
        }
        let partner = (0..n)
            .map(|i| (0..c).map(|s| (i + 1 + s % (n - 1)) % n).collect())
            .collect();
        Ok(Self {
            alpha: vec![vec![1.0; c]; n],
            beta: vec![vec![1.0; c]; n],
            partner,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.alpha.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.alpha.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, n: usize, c: usize) -> Result<()> {
        let shaped = |m: &[Vec<f64>]| m.len() == n && m.iter().all(|r| r.len() == c);
        if !shaped(&self.alpha)
            || !shaped(&self.beta)
            || self.partner.len() != n
            || self.partner.iter().any(|r| r.len() != c)
        {
            return Err(Error::dim(format!("transform draw is not {n}x{c}")));
        }
        for i in 0..n {
            for s in 0..c {
                let (a, b, r) = (self.alpha[i][s], self.beta[i][s], self.partner[i][s]);
                if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                    return Err(Error::Domain(format!(
                        "draw ({i}, {s}) has alpha {a}, beta {b} outside [0, 1]"
                    )));
                }
                if r >= n || r == i {
                    return Err(Error::contract(format!(
                        "draw ({i}, {s}) has invalid partner {r}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Samples alphas, betas and partners for a batch.
///
/// Partners of a sample are drawn without replacement from the rest of the
/// batch; when `C` exceeds `batch_size - 1` the pool is reshuffled and reused.
pub fn draw_transforms(batch_size: usize, c: usize, seed: u64) -> Result<TransformDraw> {
    if batch_size < 2 {
        return Err(Error::contract(format!(
            "draw_transforms needs batch_size >= 2, got {batch_size}"
        )));
    }
    let mut rng = rng_from(seed);
    let mut draw = TransformDraw {
        alpha: Vec::with_capacity(batch_size),
        beta: Vec::with_capacity(batch_size),
        partner: Vec::with_capacity(batch_size),
    };
    let others = batch_size - 1;
    for i in 0..batch_size {
        let mut pool: Vec<usize> = (0..batch_size).filter(|&j| j != i).collect();
        let mut partners = Vec::with_capacity(c);
        while partners.len() < c {
            let take = (c - partners.len()).min(others);
            let (chosen, _) = pool.partial_shuffle(&mut rng, take);
            partners.extend_from_slice(chosen);
        }
        draw.partner.push(partners);
        draw.alpha.push((0..c).map(|_| rng.random::<f64>()).collect());
        draw.beta.push((0..c).map(|_| rng.random::<f64>()).collect());
    }
    Ok(draw)
}

fn check_pair(fa: &[f64], fb: &[f64], alpha: f64) -> Result<()> {
    if fa.len() != fb.len() {
        return Err(Error::dim(format!(
            "interpolating vectors of length {} and {}",
            fa.len(),
            fb.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `alpha * fa + (1 - alpha) * fb`.
pub fn plain_interp(fa: &[f64], fb: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_pair(fa, fb, alpha)?;
    let (ca, cb) = (alpha, 1.0 - alpha);
    Ok(fa.iter().zip(fb).map(|(a, b)| ca * a + cb * b).collect())
}

/// Norm-direction separated interpolation:
/// `(beta |fa| + (1 - beta) |fb|) * (alpha fa/|fa| + (1 - alpha) fb/|fb|)`.
///
/// The direction mix is not renormalised. The result is evaluated as
/// `ca * fa + cb * fb` with `ca = alpha * m / |fa|`, `cb = (1 - alpha) * m / |fb|`,
/// which returns `fa` exactly at `alpha = beta = 1`.
pub fn ndsi(fa: &[f64], fb: &[f64], alpha: f64, beta: f64) -> Result<Vec<f64>> {
    check_pair(fa, fb, alpha)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Domain(format!("beta {beta} outside [0, 1]")));
    }
    let (na, nb) = (norm(fa), norm(fb));
    if !(na > EPS_NORM && nb > EPS_NORM) {
        return Err(Error::contract(format!(
            "ndsi needs both norms above {EPS_NORM:e}, got {na:e} and {nb:e}"
        )));
    }
    let (ca, cb) = ndsi_coefficients(na, nb, alpha, beta);
    Ok(fa.iter().zip(fb).map(|(a, b)| ca * a + cb * b).collect())
}

fn ndsi_coefficients(na: f64, nb: f64, alpha: f64, beta: f64) -> (f64, f64) {
    let m = beta * na + (1.0 - beta) * nb;
    (m / na * alpha, m / nb * (1.0 - alpha))
}

/// Which formula produced a transformed part.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Ndsi,
    Plain,
    /// Labels agreed but a norm was below [`EPS_NORM`].
    NdsiFallback,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BranchCounts {
    pub ndsi: u64,
    pub plain: u64,
    pub fallback: u64,
}

impl BranchCounts {
    pub fn add(&mut self, other: BranchCounts) {
        self.ndsi += other.ndsi;
        self.plain += other.plain;
        self.fallback += other.fallback;
    }

    fn record(&mut self, b: Branch) {
        match b {
            Branch::Ndsi => self.ndsi += 1,
            Branch::Plain => self.plain += 1,
            Branch::NdsiFallback => self.fallback += 1,
        }
    }
}

fn branch_for(equal_labels: bool, use_ndsi: bool, na: f64, nb: f64) -> Branch {
    if !(use_ndsi && equal_labels) {
        Branch::Plain
    } else if na > EPS_NORM && nb > EPS_NORM {
        Branch::Ndsi
    } else {
        Branch::NdsiFallback
    }
}

fn check_labels(labels: &Tensor, n: usize, c: usize) -> Result<()> {
    if labels.shape() != [n, c] {
        return Err(Error::dim(format!(
            "labels {:?} do not match a batch of {n} with {c} attributes",
            labels.shape()
        )));
    }
    Ok(())
}

/// Transformed per-attribute features of a batch, recorded on a tape.
#[derive(Clone, Debug)]
pub struct Transformed {
    pub parts: Vec<Var>,
    pub branches: Vec<Vec<Branch>>,
    pub counts: BranchCounts,
}

/// Applies the transform to every attribute of a batch.
///
/// `parts[s]` is the `[n, K]` node of attribute `s`. The NDSI branch is used
/// for `(i, s)` iff `use_ndsi` is set and `labels[i][s] == labels[r(i,s)][s]`.
pub fn apply_g(
    tape: &mut Tape,
    parts: &[Var],
    labels: &Tensor,
    draws: &TransformDraw,
    use_ndsi: bool,
) -> Result<Transformed> {
    let c = parts.len();
    let n = tape.value(*parts.first().ok_or_else(|| Error::contract("no parts"))?).rows();
    check_labels(labels, n, c)?;
    draws.validate(n, c)?;
    let mut out = Transformed {
        parts: Vec::with_capacity(c),
        branches: vec![Vec::with_capacity(c); n],
        counts: BranchCounts::default(),
    };
    for (s, &part) in parts.iter().enumerate() {
        let partner: Vec<usize> = (0..n).map(|i| draws.partner[i][s]).collect();
        let alpha: Vec<f64> = (0..n).map(|i| draws.alpha[i][s]).collect();
        let beta: Vec<f64> = (0..n).map(|i| draws.beta[i][s]).collect();
        let pv = tape.value(part);
        if pv.rows() != n {
            return Err(Error::dim("all parts must share the batch size"));
        }
        let norms: Vec<f64> = (0..n).map(|i| norm(pv.row(i))).collect();
        let branches: Vec<Branch> = (0..n)
            .map(|i| {
                let r = partner[i];
                let equal = labels.get(i, s) == labels.get(r, s);
                branch_for(equal, use_ndsi, norms[i], norms[r])
            })
            .collect();
        for (i, &b) in branches.iter().enumerate() {
            out.branches[i].push(b);
            out.counts.record(b);
        }

        let other = tape.gather_rows(part, partner)?;
        let transformed = if branches.iter().all(|&b| b != Branch::Ndsi) {
            let a = tape.scale_rows(part, alpha.clone())?;
            let b = tape.scale_rows(other, alpha.iter().map(|a| 1.0 - a).collect())?;
            tape.add(a, b)?
        } else {
            let mask: Vec<f64> = branches
                .iter()
                .map(|&b| if b == Branch::Ndsi { 1.0 } else { 0.0 })
                .collect();
            let vec = |v: Vec<f64>| Tensor::vector(v).expect("non-empty batch");
            let na = tape.row_norms(part)?;
            let nb = tape.row_norms(other)?;
            // Rows outside the NDSI branch get a unit shift so the divisions
            // below stay finite; their coefficients are masked to zero anyway.
            let shift = tape.leaf(vec(mask.iter().map(|m| 1.0 - m).collect()));
            let na_safe = tape.add(na, shift)?;
            let nb_safe = tape.add(nb, shift)?;
            let mb = tape.mul_const(na, vec(beta.clone()))?;
            let mo = tape.mul_const(nb, vec(beta.iter().map(|b| 1.0 - b).collect()))?;
            let m = tape.add(mb, mo)?;

            let ra = tape.div(m, na_safe)?;
            let ra = tape.mul_const(ra, vec(alpha.iter().zip(&mask).map(|(a, k)| a * k).collect()))?;
            let plain_a = tape.leaf(vec(alpha.iter().zip(&mask).map(|(a, k)| (1.0 - k) * a).collect()));
            let ca = tape.add(ra, plain_a)?;

            let rb = tape.div(m, nb_safe)?;
            let rb = tape.mul_const(
                rb,
                vec(alpha.iter().zip(&mask).map(|(a, k)| (1.0 - a) * k).collect()),
            )?;
            let plain_b = tape.leaf(vec(
                alpha.iter().zip(&mask).map(|(a, k)| (1.0 - k) * (1.0 - a)).collect(),
            ));
            let cb = tape.add(rb, plain_b)?;

            let a = tape.mul_rows(part, ca)?;
            let b = tape.mul_rows(other, cb)?;
            tape.add(a, b)?
        };
        out.parts.push(transformed);
    }
    Ok(out)
}

/// Reference transform over plain values, one `(i, s)` at a time.
pub fn transform_bundles(
    bundles: &[FeatureBundle],
    labels: &[Vec<u8>],
    draws: &TransformDraw,
    use_ndsi: bool,
) -> Result<(Vec<FeatureBundle>, Vec<Vec<Branch>>)> {
    let n = bundles.len();
    let c = bundles.first().map_or(0, |b| b.parts.len());
    if labels.len() != n || labels.iter().any(|l| l.len() != c) {
        return Err(Error::dim("labels do not match the bundles"));
    }
    draws.validate(n, c)?;
    let mut out = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for i in 0..n {
        let mut parts = Vec::with_capacity(c);
        let mut row = Vec::with_capacity(c);
        for s in 0..c {
            let r = draws.partner[i][s];
            let (fa, fb) = (&bundles[i].parts[s], &bundles[r].parts[s]);
            let b = branch_for(labels[i][s] == labels[r][s], use_ndsi, norm(fa), norm(fb));
            let v = match b {
                Branch::Ndsi => ndsi(fa, fb, draws.alpha[i][s], draws.beta[i][s])?,
                _ => plain_interp(fa, fb, draws.alpha[i][s])?,
            };
            parts.push(v);
            row.push(b);
        }
        let mut sum = parts[0].clone();
        for p in &parts[1..] {
            for (acc, v) in sum.iter_mut().zip(p) {
                *acc += v;
            }
        }
        out.push(FeatureBundle { parts, sum });
        flags.push(row);
    }
    Ok((out, flags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_partners_for_two_samples() {
        let d = draw_transforms(2, 1, 3).unwrap();
        assert_eq!(d.partner, vec![vec![1], vec![0]]);
    }

    #[test]
    fn partners_distinct_when_batch_allows() {
        for seed in 0..50 {
            let d = draw_transforms(8, 3, seed).unwrap();
            for (i, row) in d.partner.iter().enumerate() {
                assert!(row.iter().all(|&r| r != i && r < 8));
                let mut sorted = row.clone();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(sorted.len(), 3);
            }
        }
    }

    #[test]
    fn small_batch_recycles_partners() {
        let d = draw_transforms(3, 5, 1).unwrap();
        d.validate(3, 5).unwrap();
        for row in &d.partner {
            // the first two partners exhaust the pool of size 2
            assert_ne!(row[0], row[1]);
        }
    }

    #[test]
    fn draws_are_seeded() {
        assert_eq!(draw_transforms(16, 4, 9).unwrap(), draw_transforms(16, 4, 9).unwrap());
        assert_ne!(draw_transforms(16, 4, 9).unwrap(), draw_transforms(16, 4, 10).unwrap());
        assert!(draw_transforms(1, 4, 9).is_err());
    }

    #[test]
    fn plain_examples() {
        let (a, b) = ([2.0, 0.0], [0.0, 2.0]);
        assert_eq!(plain_interp(&a, &b, 1.0).unwrap(), a);
        assert_eq!(plain_interp(&a, &b, 0.0).unwrap(), b);
        assert_eq!(plain_interp(&a, &b, 0.25).unwrap(), vec![0.5, 1.5]);
        assert!(plain_interp(&a, &b, 1.5).is_err());
        assert!(plain_interp(&a, &[1.0], 0.5).is_err());
    }

    #[test]
    fn ndsi_examples() {
        let (a, b) = ([3.0, 0.0], [0.0, 4.0]);
        assert_eq!(ndsi(&a, &b, 1.0, 1.0).unwrap(), a);
        assert_eq!(ndsi(&a, &b, 0.0, 0.0).unwrap(), b);
        let mid = ndsi(&a, &b, 0.5, 0.5).unwrap();
        assert!((mid[0] - 1.75).abs() < 1e-15 && (mid[1] - 1.75).abs() < 1e-15);
        let v = [0.3, -1.2, 2.0];
        let same = ndsi(&v, &v, 0.37, 0.81).unwrap();
        for (x, y) in same.iter().zip(&v) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(ndsi(&[0.0, 0.0], &b, 0.5, 0.5).is_err());
    }

    #[test]
    fn degenerate_draw_is_valid() {
        let d = TransformDraw::degenerate(4, 6).unwrap();
        d.validate(4, 6).unwrap();
        assert!(TransformDraw::degenerate(1, 1).is_err());
    }
}

use crate::error::{Error, Result};

/// Pearson matrix of binary label columns.
#[derive(Clone, Debug, PartialEq)]
pub struct PearsonReport {
    pub matrix: Vec<Vec<f64>>,
    /// `true` for columns with a single distinct value; their rows and
    /// columns are reported as 0 (diagonal included).
    pub constant_columns: Vec<bool>,
}

/// Sample Pearson correlation between every pair of label columns.
pub fn pearson_matrix(labels: &[Vec<u8>]) -> Result<PearsonReport> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::contract("pearson_matrix needs at least 2 rows"));
    }
    let c = labels[0].len();
    if labels.iter().any(|r| r.len() != c) {
        return Err(Error::dim("label rows have different lengths"));
    }
    let nf = n as f64;
    let means: Vec<f64> = (0..c)
        .map(|s| labels.iter().map(|r| r[s] as f64).sum::<f64>() / nf)
        .collect();
    let mut cov = vec![vec![0.0; c]; c];
    for row in labels {
        for i in 0..c {
            let di = row[i] as f64 - means[i];
            for j in i..c {
                cov[i][j] += di * (row[j] as f64 - means[j]);
            }
        }
    }
    let constant: Vec<bool> = (0..c).map(|i| cov[i][i] == 0.0).collect();
    let mut matrix = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in i..c {
            let r = if constant[i] || constant[j] {
                0.0
            } else if i == j {
                1.0
            } else {
                (cov[i][j] / (cov[i][i] * cov[j][j]).sqrt()).clamp(-1.0, 1.0)
            };
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    Ok(PearsonReport {
        matrix,
        constant_columns: constant,
    })
}

/// Absolute correlation difference of one unordered attribute pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairShift {
    pub i: usize,
    pub j: usize,
    pub abs_diff: f64,
}

/// `|m_train - m_test|` over unique off-diagonal pairs, sorted ascending.
pub fn correlation_shift(m_train: &[Vec<f64>], m_test: &[Vec<f64>]) -> Result<Vec<PairShift>> {
    let c = m_train.len();
    let square = |m: &[Vec<f64>]| m.iter().all(|r| r.len() == m.len());
    if m_test.len() != c || !square(m_train) || !square(m_test) {
        return Err(Error::dim("correlation_shift needs two CxC matrices of equal size"));
    }
    let mut out = Vec::with_capacity(c * c.saturating_sub(1) / 2);
    for i in 0..c {
        for j in i + 1..c {
            out.push(PairShift {
                i,
                j,
                abs_diff: (m_train[i][j] - m_test[i][j]).abs(),
            });
        }
    }
    out.sort_by(|a, b| a.abs_diff.total_cmp(&b.abs_diff));
    Ok(out)
}

/// Fraction of pair shifts at or above `threshold`.
pub fn fraction_at_least(shifts: &[PairShift], threshold: f64) -> f64 {
    if shifts.is_empty() {
        return 0.0;
    }
    shifts.iter().filter(|p| p.abs_diff >= threshold).count() as f64 / shifts.len() as f64
}

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Default decision threshold on posteriors.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttributeMetrics {
    pub tpr: f64,
    pub tnr: f64,
    /// Balanced accuracy `(tpr + tnr) / 2`, the attribute's contribution to mA.
    pub accuracy: f64,
    /// Fraction of samples whose true label is positive.
    pub positive_ratio: f64,
    /// No positive samples; `tpr` was set to 1 by convention.
    pub no_positives: bool,
    /// No negative samples; `tnr` was set to 1 by convention.
    pub no_negatives: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstanceMetrics {
    /// Mean over samples of per-sample precision.
    pub precision: f64,
    /// Mean over samples of per-sample recall.
    pub recall: f64,
    /// Harmonic mean of `precision` and `recall` (0 when both are 0).
    pub f1: f64,
    /// Mean over samples of per-sample F1.
    pub mean_sample_f1: f64,
    /// Samples with no true and no predicted positive (scored 1/1/1).
    pub both_empty: usize,
    /// Samples with no predicted positive but some true positive.
    pub empty_prediction: usize,
    /// Samples with predicted positives but no true positive.
    pub empty_truth: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub ma: f64,
    pub per_attribute: Vec<AttributeMetrics>,
    pub instance: InstanceMetrics,
    pub threshold: f64,
}

/// `1` where the posterior exceeds `threshold`.
pub fn binarize(posteriors: &Tensor, threshold: f64) -> Vec<Vec<u8>> {
    (0..posteriors.rows())
        .map(|i| {
            posteriors
                .row(i)
                .iter()
                .map(|&p| (p > threshold) as u8)
                .collect()
        })
        .collect()
}

fn check_shapes(preds: &[Vec<u8>], labels: &[Vec<u8>]) -> Result<(usize, usize)> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::contract("metrics need at least one sample"));
    }
    let c = labels[0].len();
    if preds.len() != n
        || preds.iter().chain(labels).any(|r| r.len() != c)
    {
        return Err(Error::dim("predictions and labels must both be n x C"));
    }
    Ok((n, c))
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(())
}

/// Label-based metrics from binary predictions.
pub fn attribute_metrics(preds: &[Vec<u8>], labels: &[Vec<u8>]) -> Result<(f64, Vec<AttributeMetrics>)> {
    let (n, c) = check_shapes(preds, labels)?;
    let mut per = Vec::with_capacity(c);
    for s in 0..c {
        let (mut tp, mut tn, mut pos) = (0usize, 0usize, 0usize);
        for i in 0..n {
            let (p, t) = (preds[i][s] == 1, labels[i][s] == 1);
            pos += t as usize;
            tp += (p && t) as usize;
            tn += (!p && !t) as usize;
        }
        let neg = n - pos;
        let tpr = if pos == 0 { 1.0 } else { tp as f64 / pos as f64 };
        let tnr = if neg == 0 { 1.0 } else { tn as f64 / neg as f64 };
        per.push(AttributeMetrics {
            tpr,
            tnr,
            accuracy: (tpr + tnr) / 2.0,
            positive_ratio: pos as f64 / n as f64,
            no_positives: pos == 0,
            no_negatives: neg == 0,
        });
    }
    let ma = per.iter().map(|a| a.accuracy).sum::<f64>() / c as f64;
    Ok((ma, per))
}

/// Example-based precision/recall/F1 from binary predictions.
///
/// Conventions: a sample with no true and no predicted positive scores 1
/// on all three; an empty prediction against a non-empty truth scores 0;
/// predicted positives against an empty truth score precision 0 and recall 0.
pub fn instance_from_predictions(preds: &[Vec<u8>], labels: &[Vec<u8>]) -> Result<InstanceMetrics> {
    let (n, _) = check_shapes(preds, labels)?;
    let mut out = InstanceMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        mean_sample_f1: 0.0,
        both_empty: 0,
        empty_prediction: 0,
        empty_truth: 0,
    };
    let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
    for (p, t) in preds.iter().zip(labels) {
        let np = p.iter().filter(|&&v| v == 1).count();
        let nt = t.iter().filter(|&&v| v == 1).count();
        let inter = p.iter().zip(t).filter(|(&a, &b)| a == 1 && b == 1).count();
        let (pr, rc) = match (np, nt) {
            (0, 0) => {
                out.both_empty += 1;
                (1.0, 1.0)
            }
            (0, _) => {
                out.empty_prediction += 1;
                (0.0, 0.0)
            }
            (_, 0) => {
                out.empty_truth += 1;
                (0.0, 0.0)
            }
            _ => (inter as f64 / np as f64, inter as f64 / nt as f64),
        };
        ps += pr;
        rs += rc;
        fs += harmonic(pr, rc);
    }
    let nf = n as f64;
    out.precision = ps / nf;
    out.recall = rs / nf;
    out.f1 = harmonic(out.precision, out.recall);
    out.mean_sample_f1 = fs / nf;
    Ok(out)
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Full report from binary predictions.
pub fn report_from_predictions(preds: &[Vec<u8>], labels: &[Vec<u8>], threshold: f64) -> Result<MetricsReport> {
    let (ma, per_attribute) = attribute_metrics(preds, labels)?;
    Ok(MetricsReport {
        ma,
        per_attribute,
        instance: instance_from_predictions(preds, labels)?,
        threshold,
    })
}

/// mA and per-attribute records from posteriors.
pub fn mean_accuracy(posteriors: &Tensor, labels: &[Vec<u8>], threshold: f64) -> Result<(f64, Vec<AttributeMetrics>)> {
    check_threshold(threshold)?;
    attribute_metrics(&binarize(posteriors, threshold), labels)
}

pub fn instance_metrics(posteriors: &Tensor, labels: &[Vec<u8>], threshold: f64) -> Result<InstanceMetrics> {
    check_threshold(threshold)?;
    instance_from_predictions(&binarize(posteriors, threshold), labels)
}

pub fn evaluate_posteriors(posteriors: &Tensor, labels: &[Vec<u8>], threshold: f64) -> Result<MetricsReport> {
    check_threshold(threshold)?;
    report_from_predictions(&binarize(posteriors, threshold), labels, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[u8]) -> Vec<Vec<u8>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn perfect_predictions() {
        let l = vec![vec![1, 0, 1], vec![0, 0, 1]];
        let r = report_from_predictions(&l, &l, 0.5).unwrap();
        assert_eq!(r.ma, 1.0);
        assert_eq!((r.instance.precision, r.instance.recall, r.instance.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn all_positive_on_balanced_attribute() {
        let (ma, per) = attribute_metrics(&col(&[1, 1, 1, 1]), &col(&[1, 0, 1, 0])).unwrap();
        assert_eq!(ma, 0.5);
        assert_eq!((per[0].tpr, per[0].tnr), (1.0, 0.0));
    }

    #[test]
    fn hand_counted_single_attribute() {
        let (ma, per) = attribute_metrics(&col(&[1, 1, 0, 0]), &col(&[1, 0, 1, 0])).unwrap();
        assert_eq!((per[0].tpr, per[0].tnr, ma), (0.5, 0.5, 0.5));
        assert_eq!(per[0].positive_ratio, 0.5);
    }

    #[test]
    fn one_sided_attribute_is_flagged() {
        let (_, per) = attribute_metrics(&col(&[0, 1]), &col(&[0, 0])).unwrap();
        assert!(per[0].no_positives);
        assert_eq!((per[0].tpr, per[0].tnr), (1.0, 0.5));
    }

    #[test]
    fn instance_hand_case() {
        // truth {1, 2}, predicted {2, 3} over attributes 0..4
        let t = vec![vec![0, 1, 1, 0]];
        let p = vec![vec![0, 0, 1, 1]];
        let m = instance_from_predictions(&p, &t).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.mean_sample_f1), (0.5, 0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_sets() {
        let z = vec![vec![0, 0]];
        let m = instance_from_predictions(&z, &z).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.both_empty), (1.0, 1.0, 1.0, 1));
        let m = instance_from_predictions(&z, &[vec![1, 0]]).unwrap();
        assert_eq!((m.precision, m.recall, m.empty_prediction), (0.0, 0.0, 1));
        let m = instance_from_predictions(&[vec![1, 0]], &z).unwrap();
        assert_eq!((m.precision, m.recall, m.empty_truth), (0.0, 0.0, 1));
    }

    #[test]
    fn threshold_is_strict() {
        let p = Tensor::from_rows(&[[0.5, 0.51]]).unwrap();
        assert_eq!(binarize(&p, 0.5), vec![vec![0, 1]]);
        assert!(mean_accuracy(&p, &[vec![0, 1]], 1.0).is_err());
    }
}

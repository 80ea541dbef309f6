//! Metrics, mutual-information probes and exclusive-group rectification,
//! plus their text serialisations.
//!
//! CSV layouts (all reals at 17 significant digits):
//!
//! * metrics: `split,ma,precision,recall,f1,mean_sample_f1,both_empty,empty_prediction,empty_truth,threshold`
//! * per-attribute: `split,attribute,tpr,tnr,accuracy,positive_ratio,no_positives,no_negatives`
//! * MI: `k,s,mi,null_mi,probe_accuracy,bins,degenerate`
//! * anchors: `i,j,cosine,zero_i,zero_j`

mod metrics;
mod mi;
mod robust;

pub use metrics::{
    attribute_metrics, binarize, evaluate_posteriors, instance_from_predictions, instance_metrics,
    mean_accuracy, report_from_predictions, AttributeMetrics, InstanceMetrics, MetricsReport,
    THRESHOLD,
};
pub use mi::{binned_information, mi_probe, mi_table, MiEntry, MiEstimate, MiTable, ProbeConfig, EPS_MI};
pub use robust::{
    inverse_frequency_weights, robust_a_head, robust_b_rectify, HeadConfig, RobustHead,
};

use crate::format::real;
use crate::model::AnchorReport;

pub const METRICS_HEADER: &str =
    "split,ma,precision,recall,f1,mean_sample_f1,both_empty,empty_prediction,empty_truth,threshold";
pub const PER_ATTRIBUTE_HEADER: &str =
    "split,attribute,tpr,tnr,accuracy,positive_ratio,no_positives,no_negatives";
pub const MI_HEADER: &str = "k,s,mi,null_mi,probe_accuracy,bins,degenerate";
pub const ANCHORS_HEADER: &str = "i,j,cosine,zero_i,zero_j";

fn flag(b: bool) -> u8 {
    b as u8
}

impl MetricsReport {
    pub fn csv_row(&self, split: &str) -> String {
        let m = &self.instance;
        format!(
            "{split},{},{},{},{},{},{},{},{},{}",
            real(self.ma),
            real(m.precision),
            real(m.recall),
            real(m.f1),
            real(m.mean_sample_f1),
            m.both_empty,
            m.empty_prediction,
            m.empty_truth,
            real(self.threshold)
        )
    }

    pub fn per_attribute_rows(&self, split: &str) -> Vec<String> {
        self.per_attribute
            .iter()
            .enumerate()
            .map(|(s, a)| {
                format!(
                    "{split},{s},{},{},{},{},{},{}",
                    real(a.tpr),
                    real(a.tnr),
                    real(a.accuracy),
                    real(a.positive_ratio),
                    flag(a.no_positives),
                    flag(a.no_negatives)
                )
            })
            .collect()
    }

    /// `key=value` records.
    pub fn records(&self) -> Vec<String> {
        let m = &self.instance;
        let mut out = vec![
            format!("ma={}", real(self.ma)),
            format!("threshold={}", real(self.threshold)),
            format!("instance.precision={}", real(m.precision)),
            format!("instance.recall={}", real(m.recall)),
            format!("instance.f1={}", real(m.f1)),
            format!("instance.mean_sample_f1={}", real(m.mean_sample_f1)),
            format!("instance.both_empty={}", m.both_empty),
            format!("instance.empty_prediction={}", m.empty_prediction),
            format!("instance.empty_truth={}", m.empty_truth),
        ];
        for (s, a) in self.per_attribute.iter().enumerate() {
            out.push(format!("attribute.{s}.tpr={}", real(a.tpr)));
            out.push(format!("attribute.{s}.tnr={}", real(a.tnr)));
            out.push(format!("attribute.{s}.accuracy={}", real(a.accuracy)));
            out.push(format!("attribute.{s}.positive_ratio={}", real(a.positive_ratio)));
            out.push(format!("attribute.{s}.no_positives={}", flag(a.no_positives)));
            out.push(format!("attribute.{s}.no_negatives={}", flag(a.no_negatives)));
        }
        out
    }
}

impl MiTable {
    pub fn csv_rows(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| {
                let x = &e.estimate;
                format!(
                    "{},{},{},{},{},{},{}",
                    e.k,
                    e.s,
                    real(x.mi),
                    real(x.null_mi),
                    real(x.probe_accuracy),
                    x.bins,
                    flag(x.degenerate)
                )
            })
            .collect()
    }

    pub fn records(&self) -> Vec<String> {
        let mut out = vec![
            format!("mean_off_target={}", real(self.mean_off_target())),
            format!("mean_on_target={}", real(self.mean_on_target())),
            format!("mean_null={}", real(self.mean_null())),
            format!("max_null={}", real(self.max_null())),
        ];
        for e in &self.entries {
            out.push(format!("mi.{}.{}={}", e.k, e.s, real(e.estimate.mi)));
        }
        out
    }
}

pub fn anchor_rows(a: &AnchorReport) -> Vec<String> {
    let c = a.matrix.len();
    let mut out = Vec::with_capacity(c * c);
    for i in 0..c {
        for j in 0..c {
            out.push(format!(
                "{i},{j},{},{},{}",
                real(a.matrix[i][j]),
                flag(a.zero_anchors[i]),
                flag(a.zero_anchors[j])
            ));
        }
    }
    out
}

/// Header plus rows, newline-terminated.
pub fn csv(header: &str, rows: &[String]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}

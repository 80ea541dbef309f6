//! Files of a run directory and the recompute-and-diff audit.
//!
//! | file | content |
//! |---|---|
//! | `config.resolved` | full TOML config, preceded by `# config_hash = <hex>` |
//! | `metrics.csv` | one row per split |
//! | `per_attribute.csv` | one row per split and attribute |
//! | `anchors.csv` | anchor cosine matrix in long form |
//! | `mi.csv` | probe MI per `(k, s)` (header only when probes are off) |
//! | `correlation_shift.csv` | `i,j,train_corr,test_corr,abs_diff`, ascending |
//! | `history.csv` | `epoch,lr,mean_loss,steps,ndsi,plain,fallback,equal_label_pairs` |
//! | `summary.txt` | `key=value` records |
//! | `predictions.txt` | posteriors and labels of every sample |
//! | `checkpoint.txt` | final parameters |
//!
//! Everything except `history.csv` can be recomputed from `config.resolved`,
//! `predictions.txt` and `checkpoint.txt`.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use super::{generate_data, probe_features, RunConfig, RunRecord, ShiftSummary};
use crate::analysis::{
    anchor_rows, csv, report_from_predictions, binarize, MetricsReport, MiTable, ANCHORS_HEADER,
    METRICS_HEADER, MI_HEADER, PER_ATTRIBUTE_HEADER,
};
use crate::error::{Error, Result};
use crate::format::{self, real};
use crate::model::{anchor_cosine_matrix, read_checkpoint, write_checkpoint, AnchorReport, CheckpointMeta};
use crate::numcore::Tensor;

pub const SHIFT_HEADER: &str = "i,j,train_corr,test_corr,abs_diff";
pub const HISTORY_HEADER: &str = "epoch,lr,mean_loss,steps,ndsi,plain,fallback,equal_label_pairs";

/// Files written by [`write_run`], in writing order.
pub const ARTIFACT_FILES: [&str; 10] = [
    "config.resolved",
    "metrics.csv",
    "per_attribute.csv",
    "anchors.csv",
    "mi.csv",
    "correlation_shift.csv",
    "history.csv",
    "summary.txt",
    "predictions.txt",
    "checkpoint.txt",
];

/// FNV-1a over the resolved TOML text, as 16 hex digits.
pub fn config_hash(config: &RunConfig) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in config.to_toml().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn resolved_text(config: &RunConfig) -> String {
    format!("# config_hash = {}\n{}", config_hash(config), config.to_toml())
}

fn metrics_text(train: &MetricsReport, test: &MetricsReport) -> String {
    csv(METRICS_HEADER, &[train.csv_row("train"), test.csv_row("test")])
}

fn per_attribute_text(train: &MetricsReport, test: &MetricsReport) -> String {
    let mut rows = train.per_attribute_rows("train");
    rows.extend(test.per_attribute_rows("test"));
    csv(PER_ATTRIBUTE_HEADER, &rows)
}

fn mi_text(mi: Option<&MiTable>) -> String {
    csv(MI_HEADER, &mi.map(MiTable::csv_rows).unwrap_or_default())
}

fn shift_text(shift: &ShiftSummary) -> String {
    let rows: Vec<String> = shift
        .pairs
        .iter()
        .map(|p| {
            format!(
                "{},{},{},{},{}",
                p.i,
                p.j,
                real(shift.train.matrix[p.i][p.j]),
                real(shift.test.matrix[p.i][p.j]),
                real(p.abs_diff)
            )
        })
        .collect();
    csv(SHIFT_HEADER, &rows)
}

fn history_text(record: &RunRecord) -> String {
    let rows: Vec<String> = record
        .trained
        .history
        .iter()
        .map(|h| {
            format!(
                "{},{},{},{},{},{},{},{}",
                h.epoch,
                real(h.lr),
                real(h.mean_loss),
                h.steps,
                h.counts.ndsi,
                h.counts.plain,
                h.counts.fallback,
                h.equal_label_pairs
            )
        })
        .collect();
    csv(HISTORY_HEADER, &rows)
}

struct SummaryInput<'a> {
    config: &'a RunConfig,
    steps: u64,
    train: &'a MetricsReport,
    test: &'a MetricsReport,
    anchors: &'a AnchorReport,
    mi: Option<&'a MiTable>,
    shift: &'a ShiftSummary,
}

fn summary_text(s: SummaryInput<'_>) -> String {
    let mut lines = vec![
        format!("config_hash={}", config_hash(s.config)),
        format!("seed={}", s.config.seed),
        format!("mode={}", s.config.mode),
        format!("ndsi={}", s.config.ndsi),
        format!("steps={}", s.steps),
        format!("anchors.mean_abs_off_diagonal={}", real(s.anchors.mean_abs_off_diagonal())),
        format!(
            "shift.max_abs_diff={}",
            real(s.shift.pairs.last().map_or(0.0, |p| p.abs_diff))
        ),
    ];
    lines.extend(s.train.records().into_iter().map(|r| format!("train.{r}")));
    lines.extend(s.test.records().into_iter().map(|r| format!("test.{r}")));
    if let Some(mi) = s.mi {
        lines.extend(mi.records().into_iter().map(|r| format!("mi.{r}")));
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

/// Posteriors and labels of both splits as persisted in `predictions.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub train_posteriors: Tensor,
    pub train_labels: Vec<Vec<u8>>,
    pub test_posteriors: Tensor,
    pub test_labels: Vec<Vec<u8>>,
}

fn predictions_text(p: &Predictions) -> String {
    let c = p.train_posteriors.cols();
    let mut out = format!(
        "predictions 1 {c} {} {}\n",
        p.train_posteriors.rows(),
        p.test_posteriors.rows()
    );
    for (split, post, labels) in [
        ("train", &p.train_posteriors, &p.train_labels),
        ("test", &p.test_posteriors, &p.test_labels),
    ] {
        for (i, l) in labels.iter().enumerate() {
            let bits: String = l.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect();
            out.push_str(&format!("{split}\t{i}\t{bits}\t{}\n", format::join_reals(post.row(i))));
        }
    }
    out
}

pub fn read_predictions(text: &str) -> Result<Predictions> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse("empty predictions file".into()))?
        .split_whitespace()
        .collect();
    if header.len() != 5 || header[0] != "predictions" || header[1] != "1" {
        return Err(Error::Parse("bad predictions header".into()));
    }
    let c = format::parse_usize(header[2])?;
    let counts = [format::parse_usize(header[3])?, format::parse_usize(header[4])?];
    let mut posts = [Vec::new(), Vec::new()];
    let mut labels = [Vec::new(), Vec::new()];
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::Parse(format!("bad predictions line `{line}`")));
        }
        let k = match f[0] {
            "train" => 0,
            "test" => 1,
            other => return Err(Error::Parse(format!("unknown split `{other}`"))),
        };
        if format::parse_usize(f[1])? != labels[k].len() {
            return Err(Error::Parse("predictions are out of order".into()));
        }
        let l: Vec<u8> = f[2]
            .chars()
            .map(|ch| match ch {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(Error::Parse(format!("bad label bit in `{}`", f[2]))),
            })
            .collect::<Result<_>>()?;
        let p = format::parse_reals(f[3])?;
        if l.len() != c || p.len() != c {
            return Err(Error::Parse(format!("expected {c} labels and posteriors")));
        }
        labels[k].push(l);
        posts[k].extend(p);
    }
    for k in 0..2 {
        if labels[k].len() != counts[k] {
            return Err(Error::Parse("sample count does not match the header".into()));
        }
    }
    let [p0, p1] = posts;
    let [l0, l1] = labels;
    Ok(Predictions {
        train_posteriors: Tensor::matrix(l0.len(), c, p0)?,
        train_labels: l0,
        test_posteriors: Tensor::matrix(l1.len(), c, p1)?,
        test_labels: l1,
    })
}

fn checkpoint_text(record: &RunRecord) -> Result<String> {
    let mut buf = Vec::new();
    write_checkpoint(
        &mut buf,
        &record.trained.params,
        CheckpointMeta {
            seed: record.seed,
            step: record.trained.steps,
        },
    )?;
    Ok(String::from_utf8(buf).expect("checkpoint is ascii"))
}

/// Writes every artifact of a run into `dir` (created if missing).
pub fn write_run(dir: &Path, record: &RunRecord) -> Result<()> {
    fs::create_dir_all(dir)?;
    let predictions = Predictions {
        train_posteriors: record.train_posteriors.clone(),
        train_labels: record.train_labels.clone(),
        test_posteriors: record.test_posteriors.clone(),
        test_labels: record.test_labels.clone(),
    };
    let files = [
        resolved_text(&record.config),
        metrics_text(&record.train, &record.test),
        per_attribute_text(&record.train, &record.test),
        csv(ANCHORS_HEADER, &anchor_rows(&record.anchors)),
        mi_text(record.mi.as_ref()),
        shift_text(&record.shift),
        history_text(record),
        summary_text(SummaryInput {
            config: &record.config,
            steps: record.trained.steps,
            train: &record.train,
            test: &record.test,
            anchors: &record.anchors,
            mi: record.mi.as_ref(),
            shift: &record.shift,
        }),
        predictions_text(&predictions),
        checkpoint_text(record)?,
    ];
    for (name, text) in ARTIFACT_FILES.iter().zip(files) {
        fs::write(dir.join(name), text)?;
    }
    Ok(())
}

fn read(dir: &Path, name: &str) -> Result<String> {
    fs::read_to_string(dir.join(name))
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", dir.join(name).display())))
}

/// Recomputes every derivable artifact of a run directory.
///
/// Metrics come from `predictions.txt`, anchors from `checkpoint.txt`, and
/// MI from the checkpoint applied to data regenerated from
/// `config.resolved`. Posteriors recomputed from the checkpoint must match
/// the persisted ones exactly; a mismatch is reported as an error.
pub fn recompute_artifacts(dir: &Path) -> Result<Vec<(String, String)>> {
    let (files, problems) = recompute(dir)?;
    match problems.first() {
        Some(p) => Err(Error::contract(p.clone())),
        None => Ok(files),
    }
}

type Recomputed = (Vec<(String, String)>, Vec<String>);

fn recompute(dir: &Path) -> Result<Recomputed> {
    let config = RunConfig::from_toml(&read(dir, "config.resolved")?)?;
    let preds = read_predictions(&read(dir, "predictions.txt")?)?;
    let (params, meta) = read_checkpoint(BufReader::new(fs::File::open(dir.join("checkpoint.txt"))?))?;
    let t = config.threshold;
    let train = report_from_predictions(&binarize(&preds.train_posteriors, t), &preds.train_labels, t)?;
    let test = report_from_predictions(&binarize(&preds.test_posteriors, t), &preds.test_labels, t)?;
    let anchors = anchor_cosine_matrix(&params);
    let shift = ShiftSummary::from_labels(&preds.train_labels, &preds.test_labels)?;

    let (train_data, test_data) = generate_data(&config)?;
    let mut problems = Vec::new();
    if train_data.labels() != preds.train_labels || test_data.labels() != preds.test_labels {
        problems.push("regenerated labels differ from predictions.txt".to_string());
    }
    let all = |n: usize| (0..n).collect::<Vec<_>>();
    let train_post = params.predict(&train_data.inputs(&all(train_data.len())))?;
    let test_post = params.predict(&test_data.inputs(&all(test_data.len())))?;
    if train_post != preds.train_posteriors || test_post != preds.test_posteriors {
        problems.push("checkpoint posteriors differ from predictions.txt".to_string());
    }
    let mi = probe_features(&config, &params, &test_data)?;

    let files = vec![
        ("config.resolved".into(), resolved_text(&config)),
        ("metrics.csv".into(), metrics_text(&train, &test)),
        ("per_attribute.csv".into(), per_attribute_text(&train, &test)),
        ("anchors.csv".into(), csv(ANCHORS_HEADER, &anchor_rows(&anchors))),
        ("mi.csv".into(), mi_text(mi.as_ref())),
        ("correlation_shift.csv".into(), shift_text(&shift)),
        (
            "summary.txt".into(),
            summary_text(SummaryInput {
                config: &config,
                steps: meta.step,
                train: &train,
                test: &test,
                anchors: &anchors,
                mi: mi.as_ref(),
                shift: &shift,
            }),
        ),
        ("predictions.txt".into(), predictions_text(&preds)),
    ];
    Ok((files, problems))
}

/// Writes recomputed artifacts of `dir` into `out`.
pub fn analyze_dir(dir: &Path, out: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (name, text) in recompute_artifacts(dir)? {
        fs::write(out.join(&name), text)?;
        written.push(name);
    }
    Ok(written)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditReport {
    pub checked: Vec<String>,
    /// `(file, first differing line number, 1-based)`.
    pub mismatches: Vec<(String, usize)>,
    /// Inconsistencies between the checkpoint, the data and `predictions.txt`.
    pub problems: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty() && self.problems.is_empty()
    }
}

/// Recomputes every derivable artifact and diffs it against the file on disk.
pub fn audit_dir(dir: &Path) -> Result<AuditReport> {
    let (files, problems) = recompute(dir)?;
    let mut report = AuditReport {
        problems,
        ..Default::default()
    };
    for (name, text) in files {
        let on_disk = read(dir, &name)?;
        if on_disk != text {
            let line = on_disk
                .lines()
                .zip(text.lines())
                .position(|(a, b)| a != b)
                .unwrap_or_else(|| on_disk.lines().count().min(text.lines().count()))
                + 1;
            report.mismatches.push((name.clone(), line));
        }
        report.checked.push(name);
    }
    Ok(report)
}

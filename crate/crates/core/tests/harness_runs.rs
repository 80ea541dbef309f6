//! End-to-end runs on tiny configurations.

use attrdis::harness::{
    ablate_ndsi, audit_dir, compare_modes, fit, generate_data, read_predictions, train_run,
    write_run, Mode, RunConfig, ARTIFACT_FILES,
};
use attrdis::datagen::{Dataset, Split};
use attrdis::Error;

fn tiny(mode: Mode, seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.mode = mode;
    c.seed = seed;
    c.data.n_train = 512;
    c.data.n_test = 256;
    c.data.input_dim = 16;
    c.data.marginals = vec![0.3, 0.5, 0.4, 0.6];
    c.data.train_pairs = vec![(0, 1, 0.9), (2, 3, 0.9)];
    c.model.hybrid = 8;
    c.model.hidden = 16;
    c.model.classifier_hidden = 8;
    c.train.epochs = 30;
    c.train.batch_size = 32;
    c.optim.milestones = vec![20, 25];
    c.probe.enabled = false;
    c
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let mut c = tiny(Mode::Baseline, 3);
    c.optim.lr = 0.0;
    c.train.epochs = 2;
    let (train, _) = generate_data(&c).unwrap();
    let t = fit(&c, &train).unwrap();
    assert!(t.steps > 0);
    assert_eq!(t.params, t.initial);
}

#[test]
fn degenerate_draws_reproduce_baseline_losses() {
    let mut eq4 = tiny(Mode::Eq4, 5);
    eq4.train.epochs = 3;
    eq4.debug.degenerate_draws = true;
    let mut base = eq4.clone();
    base.mode = Mode::Baseline;
    base.debug.degenerate_draws = false;
    let (train, _) = generate_data(&eq4).unwrap();
    let a = fit(&eq4, &train).unwrap();
    let b = fit(&base, &train).unwrap();
    assert_eq!(a.step_losses, b.step_losses);
    // Same gradients up to rounding along the transform path.
    for (p, q) in a.params.tensors().iter().zip(b.params.tensors()) {
        for (x, y) in p.data().iter().zip(q.data()) {
            assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn loss_falls_over_first_five_epochs_for_every_mode() {
    for mode in Mode::ALL {
        for seed in 0..2 {
            let c = tiny(mode, seed);
            let (train, _) = generate_data(&c).unwrap();
            let t = fit(&c, &train).unwrap();
            let losses: Vec<f64> = t.history.iter().take(5).map(|h| h.mean_loss).collect();
            assert!(
                losses.windows(2).all(|w| w[1] < w[0]),
                "{mode} seed {seed}: {losses:?}"
            );
        }
    }
}

#[test]
fn self_comparison_has_zero_differences() {
    let mut c = tiny(Mode::Baseline, 0);
    c.train.epochs = 3;
    let cmp = compare_modes(&c, &[Mode::Baseline, Mode::Baseline], &[0, 1], 2).unwrap();
    for arm in &cmp.arms {
        assert!(arm.diff_ma.as_ref().unwrap().iter().all(|&d| d == 0.0));
        assert!(arm.diff_f1.as_ref().unwrap().iter().all(|&d| d == 0.0));
    }
    assert_eq!(cmp.rows().len(), 4);
}

#[test]
fn transform_modes_report_mi_and_anchors() {
    let mut c = tiny(Mode::Eq3, 0);
    c.train.epochs = 2;
    c.probe.enabled = true;
    c.probe.steps = 50;
    let cmp = compare_modes(&c, &[Mode::Eq3, Mode::Eq4], &[0], 1).unwrap();
    for arm in &cmp.arms {
        let run = &arm.runs[0];
        assert_eq!(run.mi.as_ref().unwrap().entries.len(), 16);
        assert_eq!(run.anchors.matrix.len(), 4);
    }
}

#[test]
fn ndsi_ablation_accounts_for_branches() {
    let mut c = tiny(Mode::Eq4, 0);
    c.train.epochs = 2;
    let cmp = ablate_ndsi(&c, &[0, 1], 1).unwrap();
    assert_eq!(cmp.arms.len(), 4);
    assert_eq!(cmp.rows().len(), 8);
    for arm in &cmp.arms {
        for run in &arm.runs {
            for h in &run.trained.history {
                if arm.arm.ndsi {
                    assert_eq!(h.counts.ndsi + h.counts.fallback, h.equal_label_pairs);
                    assert!(h.counts.ndsi > 0);
                } else {
                    assert_eq!(h.counts.ndsi + h.counts.fallback, 0);
                }
            }
        }
    }
    c.data.norm_jitter = 0.0;
    assert!(matches!(ablate_ndsi(&c, &[0], 1), Err(Error::Config { .. })));
}

#[test]
fn schedule_divides_by_ten_per_milestone() {
    let c = tiny(Mode::Baseline, 0);
    let (train, _) = generate_data(&c).unwrap();
    let mut short = c.clone();
    short.train.epochs = 27;
    let t = fit(&short, &train).unwrap();
    for h in &t.history {
        let passed = c.optim.milestones.iter().filter(|&&m| h.epoch >= m).count() as i32;
        assert_eq!(h.lr, c.optim.lr * 10f64.powi(-passed));
    }
}

#[test]
fn non_finite_loss_aborts_with_location() {
    let mut c = tiny(Mode::Baseline, 0);
    c.train.epochs = 3;
    let (train, _) = generate_data(&c).unwrap();
    let mut samples = train.samples().to_vec();
    samples[7].x[0] = f64::NAN;
    let poisoned = Dataset::new(samples, None, Split::Train).unwrap();
    match fit(&c, &poisoned) {
        Err(Error::NonFinite(m)) => assert!(m.starts_with("epoch 0"), "{m}"),
        other => panic!("expected a non-finite error, got {:?}", other.map(|t| t.steps)),
    }
}

#[test]
fn artifacts_round_trip_and_audit_clean() {
    let mut c = tiny(Mode::Eq4, 1);
    c.train.epochs = 3;
    c.probe.enabled = true;
    c.probe.steps = 40;
    let run = train_run(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), &run).unwrap();
    for f in ARTIFACT_FILES {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let preds = read_predictions(&std::fs::read_to_string(dir.path().join("predictions.txt")).unwrap()).unwrap();
    assert_eq!(preds.test_posteriors, run.test_posteriors);
    assert_eq!(preds.train_labels, run.train_labels);
    assert!(audit_dir(dir.path()).unwrap().is_clean());

    // A hand-edited metric is caught.
    let path = dir.path().join("metrics.csv");
    let text = std::fs::read_to_string(&path).unwrap().replacen("test,", "test,0", 1);
    std::fs::write(&path, text).unwrap();
    let report = audit_dir(dir.path()).unwrap();
    assert_eq!(report.mismatches, vec![("metrics.csv".to_string(), 3)]);
}

mod common;

use repnet::checkpoint;
use repnet::data::Split;
use repnet::experiments::{prepare_experiment, run_experiment};
use repnet::training::{evaluate, fit, per_window_errors, StopReason};
use repnet::{build_model, Error, ExperimentConfig};

const SINE: &str = r#"
[data]
synthetic = { rows = 700, seed = 5, noise = 0.05 }
exclude_channels = [2, 3, 4, 5, 6]

[model]
dataset = "ETTh1"
T = 32
H = 8
seed = 1
extractors = [{ cover = 5 }, { cover = 10 }]
embedding = { kind = "linear_1", e_f = 8, e_t = 8 }
time_method = { use_tempEmb = true }
memory = { N = 1, use_attention = false, heads = 4, use_glu = true, joint_feature_mix = false, dropout = 0.0 }
projection = { R = 0 }

[train]
lr0 = 0.003
batch_size = 16
max_epochs = 8
es_patience = 3
"#;

fn sine() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(SINE).unwrap()
}

/// Test MSE of forecasting the training mean, which is zero after scaling.
fn mean_baseline(cfg: &ExperimentConfig) -> f64 {
    let data = prepare_experiment(cfg).unwrap();
    let test = data.windows(Split::Test).unwrap();
    let (mut se, mut n) = (0.0, 0);
    for w in test.iter() {
        se += w.y.iter().map(|v| v * v).sum::<f64>();
        n += w.y.len();
    }
    se / n as f64
}

#[test]
fn micro_run_beats_constant_mean() {
    let cfg = sine();
    let out = run_experiment(&cfg, None).unwrap();
    let baseline = mean_baseline(&cfg);
    let mse = out.report.test_mse.unwrap();
    assert!(mse < 0.5 * baseline, "test mse {mse}, baseline {baseline}");
    let first = out.report.epochs[0].train_loss;
    let last = out.report.epochs.last().unwrap().train_loss;
    assert!(last < first);
}

#[test]
fn seeded_runs_are_identical() {
    let mut cfg = sine();
    cfg.train.max_epochs = 2;
    cfg.model.memory.dropout = 0.25;
    let a = run_experiment(&cfg, None).unwrap();
    let b = run_experiment(&cfg, None).unwrap();
    assert_eq!(a.model.store, b.model.store);
    assert_eq!(a.report.test_mse, b.report.test_mse);
    assert_eq!(a.report.val_history(), b.report.val_history());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut cfg = sine();
    cfg.train.lr0 = 0.0;
    cfg.train.max_epochs = 2;
    let data = prepare_experiment(&cfg).unwrap();
    let mut model = build_model(&cfg.model, data.series.channels(), data.frequency).unwrap();
    let before = model.store.clone();
    fit(&mut model, &data, &cfg.train).unwrap();
    assert_eq!(model.store, before);
}

#[test]
fn checkpoint_reload_reproduces_test_metrics() {
    let mut cfg = sine();
    cfg.train.max_epochs = 2;
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&cfg, Some(dir.path())).unwrap();
    for f in ["config.toml", "report.json", "loss_curve.csv", "model.ckpt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let data = prepare_experiment(&cfg).unwrap();
    let mut fresh = build_model(&cfg.model, data.series.channels(), data.frequency).unwrap();
    checkpoint::load(&dir.path().join("model.ckpt"), &mut fresh).unwrap();
    let m = evaluate(&fresh, &data.windows(Split::Test).unwrap(), 64, cfg.train.delta).unwrap();
    assert_eq!(Some(m.mse), out.report.test_mse);
    assert_eq!(Some(m.mae), out.report.test_mae);
    let saved = repnet::RunReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(saved.test_mse, out.report.test_mse);

    let mut other = cfg.model.clone();
    other.seed += 1;
    let mut mismatched = build_model(&other, data.series.channels(), data.frequency).unwrap();
    assert!(matches!(checkpoint::load(&dir.path().join("model.ckpt"), &mut mismatched), Err(Error::Checkpoint(_))));
}

#[test]
fn evaluation_does_not_depend_on_batch_size() {
    let cfg = sine();
    let data = prepare_experiment(&cfg).unwrap();
    let model = build_model(&cfg.model, data.series.channels(), data.frequency).unwrap();
    let test = data.windows(Split::Test).unwrap();
    let whole = evaluate(&model, &test, 10_000, 1.0).unwrap();
    for bs in [1, 7, 64] {
        let m = evaluate(&model, &test, bs, 1.0).unwrap();
        assert!((m.mse - whole.mse).abs() < 1e-12 * whole.mse);
        assert!((m.mae - whole.mae).abs() < 1e-12 * whole.mae);
        assert_eq!(m.windows, whole.windows);
    }
    let per = per_window_errors(&model, &test, 5).unwrap();
    assert_eq!(per.len(), test.len());
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    assert!((mean - whole.mse).abs() < 1e-12 * whole.mse);
}

#[test]
fn zero_model_scores_mean_squared_target() {
    let mut cfg = sine();
    cfg.model.instance_norm = false;
    let data = prepare_experiment(&cfg).unwrap();
    let mut model = build_model(&cfg.model, data.series.channels(), data.frequency).unwrap();
    model.store.zero_all();
    let m = evaluate(&model, &data.windows(Split::Test).unwrap(), 32, 1.0).unwrap();
    let want = mean_baseline(&cfg);
    assert!((m.mse - want).abs() < 1e-12 * want);
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let mut cfg = sine();
    cfg.train.lr0 = 1e300;
    cfg.train.max_epochs = 3;
    cfg.model.instance_norm = false;
    let dir = tempfile::tempdir().unwrap();
    match run_experiment(&cfg, Some(dir.path())) {
        Err(Error::Divergence(report)) => {
            assert_eq!(report.stop_reason, StopReason::Diverged);
            assert!(dir.path().join("report.json").exists());
            assert!(!dir.path().join("model.ckpt").exists());
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.report.test_mse)),
    }
}

#[test]
fn early_stopping_ends_flat_runs() {
    let mut cfg = sine();
    cfg.train.lr0 = 0.0;
    cfg.train.max_epochs = 20;
    cfg.train.es_patience = 2;
    let out = run_experiment(&cfg, None).unwrap();
    assert_eq!(out.report.stop_reason, StopReason::EarlyStop);
    assert_eq!(out.report.epochs.len(), 3);
    assert_eq!(out.report.best_epoch, Some(1));
}

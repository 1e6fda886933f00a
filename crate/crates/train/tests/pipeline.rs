use std::path::Path;

use proptest::prelude::*;
use pulseclust_core::dataset::{generate, DatasetSpec};
use pulseclust_core::metrics::Matrix;
use pulseclust_core::Exec;
use pulseclust_train::config::{InputNorm, RunConfig};
use pulseclust_train::model::EncoderConfig;
use pulseclust_train::pipeline::{
    checkpoint_path, evaluate, frame_batch, load_dataset, normalize_phase, normalize_rms, silhouette_argmax,
    stream_seed, sweep_clusters, train, write_confusion_csv, EarlyStopping, SweepRow,
};

fn tiny(out: &Path, seed: u64) -> RunConfig {
    let mut c = RunConfig::toy();
    c.seed = seed;
    c.out_dir = out.to_path_buf();
    c.data.per_class = 8;
    c.encoder = EncoderConfig::desk(8);
    for s in [&mut c.stage1, &mut c.stage2, &mut c.stage3] {
        s.max_epochs = 2;
        s.batch_size = 16;
    }
    c.stage2.neighbors = 4;
    c.stage3.neighbors = 4;
    c.stage3.labeled_batch_size = 8;
    c.eval.kmeans_restarts = 2;
    c
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn early_stopping_waits_for_patience() {
    let mut s = EarlyStopping::new(2, 0.1);
    assert!(!s.update(10.0));
    assert!(!s.update(8.0));
    // 7.5 is not a 10% improvement on 8
    assert!(!s.update(7.5));
    assert!(s.update(7.4));

    let mut s = EarlyStopping::new(3, 1e-3);
    for loss in [5.0, 4.0, 3.0, 2.0, 1.0] {
        assert!(!s.update(loss));
    }
    let mut never = EarlyStopping::new(0, 1e-3);
    assert!((0..20).all(|_| !never.update(1.0)));
}

#[test]
fn config_round_trips_through_toml() {
    for cfg in [RunConfig::toy(), RunConfig::full()] {
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }
    let partial = RunConfig::from_toml_str("seed = 3\n[stage1]\ntemperature = 0.3\n").unwrap();
    assert_eq!(partial.seed, 3);
    assert_eq!(partial.stage1.temperature, 0.3);
    assert_eq!(partial.stage2, RunConfig::default().stage2);
    assert!(RunConfig::from_toml_str("[stage1]\ntemprature = 0.3\n").is_err());
    assert!(RunConfig::from_toml_str("[data]\ninput_norm = \"log\"\n").is_err());
}

#[test]
fn config_validation_rejects_bad_values() {
    let ok = RunConfig::toy();
    ok.validate(1024).unwrap();
    ok.validate_for(800, 4).unwrap();
    assert!(ok.validate_for(40, 4).is_err());

    let mut c = ok.clone();
    c.stage1.temperature = 0.0;
    assert!(c.validate(1024).is_err());
    let mut c = ok.clone();
    c.stage2.batch_size = 1;
    assert!(c.validate(1024).is_err());
    let mut c = ok.clone();
    c.stage3.augmentation_probabilities = Some(vec![0.5; 5]);
    assert!(c.validate(1024).is_err());
    let mut c = ok.clone();
    c.stage3.augmentation_probabilities = Some(vec![0.5, 0.5, 0.5, 0.5, 0.5, 1.5]);
    assert!(c.validate(1024).is_err());
    let mut c = ok.clone();
    c.sweep.min_clusters = 0;
    assert!(c.validate(1024).is_err());
    let mut c = ok;
    c.data.scale = 0.0;
    assert!(c.validate(1024).is_err());
}

#[test]
fn stream_seeds_differ_by_path() {
    let a = stream_seed(7, &[1, 2]);
    assert_eq!(a, stream_seed(7, &[1, 2]));
    assert_ne!(a, stream_seed(7, &[2, 1]));
    assert_ne!(a, stream_seed(8, &[1, 2]));
    assert_ne!(stream_seed(7, &[1]), stream_seed(7, &[1, 0]));
}

#[test]
fn frame_batch_layout_and_determinism() {
    let cfg = tiny(Path::new("unused"), 1);
    let ds = load_dataset(&cfg, Exec::Sequential).unwrap();
    let policy = cfg.stage1.policy();
    let rows = [3, 3, 10];
    let a = frame_batch(&ds, &rows, Some(&policy), InputNorm::Phase, 5, Exec::Sequential).unwrap();
    let b = frame_batch(&ds, &rows, Some(&policy), InputNorm::Phase, 5, Exec::default()).unwrap();
    assert_eq!(a.shape(), &[3, 2, 1024]);
    assert_eq!(a.data(), b.data());
    // same sample, different row streams
    assert_ne!(&a.data()[..2048], &a.data()[2048..4096]);
    let c = frame_batch(&ds, &rows, Some(&policy), InputNorm::Phase, 6, Exec::Sequential).unwrap();
    assert_ne!(a.data(), c.data());

    let plain = frame_batch(&ds, &[3], None, InputNorm::Rms, 0, Exec::Sequential).unwrap();
    let power: f64 = plain.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / 1024.0;
    assert!((power - 1.0).abs() < 1e-4);
    assert!(frame_batch(&ds, &[], None, InputNorm::Rms, 0, Exec::Sequential).is_err());
}

#[test]
fn ground_truth_scores_one() {
    let ds = generate(&DatasetSpec::toy(3, 5), Exec::Sequential).unwrap();
    let rows = evaluate(&ds.labels(), &ds, "truth").unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!((r.snr_db.as_str(), r.acc, r.nmi, r.ari, r.purity), ("all", 1.0, 1.0, 1.0, 1.0));
    assert!(evaluate(&ds.labels()[1..], &ds, "short").is_err());
}

#[test]
fn dataset2_reports_every_snr_level() {
    let ds = generate(&DatasetSpec::dataset2(1, 0.01), Exec::default()).unwrap();
    let rows = evaluate(&ds.labels(), &ds, "truth").unwrap();
    assert_eq!(rows.len(), 22);
    let levels: Vec<String> = rows[1..].iter().map(|r| r.snr_db.clone()).collect();
    let expected: Vec<String> = (-10..=10).map(|l| format!("{l}")).collect();
    assert_eq!(levels, expected);
    assert!(rows.iter().all(|r| r.acc == 1.0));
}

#[test]
fn sweep_marks_single_cluster_undefined() {
    let pts: Vec<Vec<f64>> = (0..30)
        .map(|i| {
            let c = (i % 3) as f64 * 10.0;
            vec![c + (i as f64 * 0.01), c - (i as f64 * 0.013)]
        })
        .collect();
    let truth: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let features = Matrix::from_rows(&pts).unwrap();
    let rows = sweep_clusters(&features, &truth, 1..=5, 1, 3, Exec::Sequential).unwrap();
    assert_eq!(rows[0].silhouette, None);
    assert_eq!(rows[0].purity, 1.0 / 3.0);
    assert!(rows[1..].iter().all(|r| r.silhouette.is_some()));
    assert_eq!(silhouette_argmax(&rows), Some(3));
    assert_eq!(rows[2].purity, 1.0);
    let undefined = [SweepRow { clusters: 1, silhouette: None, purity: 1.0 }];
    assert_eq!(silhouette_argmax(&undefined), None);
}

#[test]
fn confusion_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("confusion.csv");
    write_confusion_csv(&path, &[0, 0, 1, 1, 1], &[2, 2, 2, 5, 5]).unwrap();
    assert_eq!(read(&path), "cluster,class_2,class_5\n0,2,0\n1,1,2\n");
}

#[test]
fn training_writes_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = train(&tiny(&a, 11), Exec::default(), false).unwrap();
    let second = train(&tiny(&b, 11), Exec::default(), false).unwrap();
    assert_eq!(first.metrics, second.metrics);
    assert_eq!(first.final_predictions, second.final_predictions);
    for stage in 1..=3 {
        assert_eq!(std::fs::read(checkpoint_path(&a, stage)).unwrap(), std::fs::read(checkpoint_path(&b, stage)).unwrap());
    }
    for f in ["config.toml", "metrics.csv", "confusion.csv", "thresholds.csv", "mining.csv"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    let metrics = read(&a.join("metrics.csv"));
    assert!(metrics.starts_with("stage,dataset,snr_db,acc,nmi,ari,purity\n"));
    assert_eq!(metrics.lines().count(), 4);
    let thresholds = read(&a.join("thresholds.csv"));
    assert!(thresholds.starts_with("epoch,confident_fraction,tau_0,tau_1,tau_2,tau_3,"));
    assert_eq!(thresholds.lines().count(), 1 + first.reports[2].thresholds.len());
    assert_eq!(first.reports.len(), 3);
    assert!(first.reports.iter().all(|r| !r.epoch_losses.is_empty() && r.epoch_losses.iter().all(|l| l.is_finite())));
    let saved = RunConfig::from_file(&a.join("config.toml")).unwrap();
    assert_eq!(saved, tiny(&a, 11));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (full, resumed) = (dir.path().join("full"), dir.path().join("resumed"));
    let reference = train(&tiny(&full, 12), Exec::default(), false).unwrap();
    std::fs::create_dir_all(&resumed).unwrap();
    std::fs::copy(checkpoint_path(&full, 1), checkpoint_path(&resumed, 1)).unwrap();
    let outcome = train(&tiny(&resumed, 12), Exec::default(), true).unwrap();
    assert_eq!(outcome.reports.len(), 2);
    for (x, y) in reference.metrics.iter().zip(&outcome.metrics) {
        assert_eq!(x.stage, y.stage);
        assert!((x.acc - y.acc).abs() < 1e-4, "{x:?} vs {y:?}");
    }
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let a = train(&tiny(&dir.path().join("p"), 13), Exec::default(), false).unwrap();
    let b = train(&tiny(&dir.path().join("s"), 13), Exec::Sequential, false).unwrap();
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        assert!((x.acc - y.acc).abs() < 1e-4, "{x:?} vs {y:?}");
    }
}

#[test]
fn whole_cluster_mining_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), 14);
    // every sample of a cluster is mined: supervised contrast on k-means labels
    cfg.stage2.neighbors = 8;
    cfg.stage3.neighbors = 8;
    let outcome = train(&cfg, Exec::default(), false).unwrap();
    assert_eq!(outcome.metrics.len(), 3);
    cfg.stage2.neighbors = 9;
    assert!(train(&cfg, Exec::default(), false).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phase_normalization_is_unit_modulus_and_idempotent(v in prop::collection::vec(-5.0f32..5.0, 2..64)) {
        let mut frame = v.clone();
        frame.truncate(frame.len() / 2 * 2);
        normalize_phase(&mut frame);
        let n = frame.len() / 2;
        for k in 0..n {
            let m = (frame[k] * frame[k] + frame[n + k] * frame[n + k]).sqrt();
            prop_assert!(m == 0.0 || (m - 1.0).abs() < 1e-5);
        }
        let mut again = frame.clone();
        normalize_phase(&mut again);
        for (a, b) in frame.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rms_normalization_ignores_input_gain(v in prop::collection::vec(-5.0f32..5.0, 4..64), gain in 0.01f32..100.0) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let mut a = v.clone();
        let mut b: Vec<f32> = v.iter().map(|x| x * gain).collect();
        normalize_rms(&mut a);
        normalize_rms(&mut b);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-4 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn steadily_falling_loss_never_stops(start in 1.0f64..100.0, drop in 0.01f64..0.5, patience in 1usize..6) {
        let mut s = EarlyStopping::new(patience, 1e-3);
        let mut loss = start;
        for _ in 0..40 {
            prop_assert!(!s.update(loss));
            loss *= 1.0 - drop;
        }
    }
}

//! Integration: the whole workflow through the public API only — JSON
//! configuration to simulated data to statistics to a test decision, plus
//! the file formats that carry results between stages.

use oucp::asymptotics::{load_or_compute_table, simulate_bridge_sup};
use oucp::inference::{run_test, CriticalValueSpec, ScanMode, SigmaSpec};
use oucp::io::{load_path_csv, read_meta_json, write_meta_json, write_path_csv};
use oucp::model::DriftParams;
use oucp::simulate::{simulate_with_change, ChangeSpec};
use oucp::suffstats::{accumulate, prefix_stats};
use oucp::{ExperimentConfig, ModelConfig};

#[test]
fn config_to_decision_pipeline() {
    // Configuration arrives as JSON, as it would from disk.
    let cfg: ModelConfig = serde_json::from_str(
        r#"{
            "basis": {"period": 1.0, "family": "fourier", "count": 2},
            "mu": [1.0, 0.5],
            "alpha": 1.0,
            "sigma": 0.2,
            "init": {"type": "stationary"}
        }"#,
    )
    .unwrap();
    let model = cfg.build().unwrap();

    // A large mean-level shift halfway through the sample.
    let post = DriftParams::new(vec![2.0, 0.5], 1.0);
    let change = ChangeSpec::new(model.theta.clone(), post, 0.5).unwrap();
    let path = simulate_with_change(&model, &change, 120.0, 0.01, 424_242).unwrap();

    let table = simulate_bridge_sup(2, (0.1, 0.9), 400, 2_000, 9, &[0.95]).unwrap();
    let report = run_test(
        &path,
        &model.basis,
        SigmaSpec::Known(0.2),
        ScanMode::Window { s1: 0.1, s2: 0.9 },
        0.05,
        CriticalValueSpec::FromTable(&table),
    )
    .unwrap();

    assert!(report.reject, "a one-unit level shift must be detected");
    assert!(
        (report.s_hat - 0.5).abs() < 0.1,
        "break located at {} instead of near 0.5",
        report.s_hat
    );
    // The refitted segments should bracket the true levels.
    assert!((report.theta_pre.mu[0] - 1.0).abs() < 0.3);
    assert!((report.theta_post.mu[0] - 2.0).abs() < 0.3);

    // The report must serialize with the decision and provenance intact.
    let json = serde_json::to_value(&report).unwrap();
    assert_eq!(json["reject"], serde_json::Value::Bool(true));
    assert_eq!(json["cv_source"]["kind"], "bridge");
    assert_eq!(json["sigma_used"]["source"], "known");
}

#[test]
fn csv_round_trip_preserves_statistics() {
    let cfg: ModelConfig = serde_json::from_str(
        r#"{
            "basis": {"period": 1.0, "family": "fourier", "count": 2},
            "mu": [1.0, 0.5],
            "alpha": 1.0,
            "sigma": 0.2
        }"#,
    )
    .unwrap();
    let model = cfg.build().unwrap();
    let path = oucp::simulate::simulate_exact(&model, 25.0, 0.01, 7).unwrap();

    let mut csv = Vec::new();
    write_path_csv(&path, &mut csv).unwrap();
    let loaded = load_path_csv(csv.as_slice(), 1.0).unwrap();

    // The 17-significant-digit format reproduces every f64 bit for bit, so
    // downstream statistics agree exactly.
    let a = accumulate(&path, &model.basis, (0.0, 25.0)).unwrap();
    let b = accumulate(&loaded, &model.basis, (0.0, 25.0)).unwrap();
    assert_eq!(a.q(), b.q());
    assert_eq!(a.rt(), b.rt());

    let mut meta = Vec::new();
    write_meta_json(path.meta(), &mut meta).unwrap();
    let back = read_meta_json(meta.as_slice()).unwrap();
    assert_eq!(&back, path.meta());
}

#[test]
fn prefix_statistics_match_direct_segment_accumulation() {
    let cfg: ModelConfig = serde_json::from_str(
        r#"{
            "basis": {"period": 1.0, "family": "fourier", "count": 2},
            "mu": [0.3, -0.4],
            "alpha": 2.0,
            "sigma": 0.5
        }"#,
    )
    .unwrap();
    let model = cfg.build().unwrap();
    let path = oucp::simulate::simulate_exact(&model, 10.0, 0.005, 31).unwrap();

    let candidates = [400usize, 1000, 1600];
    let prefix = prefix_stats(&path, &model.basis, &candidates).unwrap();
    for (pos, &idx) in candidates.iter().enumerate() {
        let tau = path.times()[idx];
        let direct = accumulate(&path, &model.basis, (0.0, tau)).unwrap();
        let via_prefix = prefix.prefix(pos);
        let dq = (via_prefix.q() - direct.q()).abs().max();
        assert!(dq < 1e-12, "prefix Gram deviates by {dq:e} at index {idx}");
        let suffix = prefix.suffix(pos);
        let direct_tail = accumulate(&path, &model.basis, (tau, 10.0)).unwrap();
        let ds = (suffix.q() - direct_tail.q()).abs().max();
        assert!(ds < 1e-10, "suffix Gram deviates by {ds:e} at index {idx}");
    }
}

#[test]
fn bridge_table_cache_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let fresh =
        load_or_compute_table(dir.path(), 1, (0.2, 0.8), 200, 400, 5, &[0.95]).unwrap();
    // Second call must hit the file and reproduce the table exactly.
    let cached =
        load_or_compute_table(dir.path(), 1, (0.2, 0.8), 200, 400, 5, &[0.95]).unwrap();
    assert_eq!(fresh, cached);
    // Different seed produces a different file, not a cache collision.
    let other = load_or_compute_table(dir.path(), 1, (0.2, 0.8), 200, 400, 6, &[0.95]).unwrap();
    assert_ne!(fresh.quantiles, other.quantiles);
}

#[test]
fn experiment_config_round_trips_with_defaults() {
    let text = r#"{
        "model": {
            "basis": {"period": 1.0, "family": "fourier", "count": 1},
            "mu": [1.0],
            "alpha": 1.0,
            "sigma": 0.2
        },
        "horizons": [20.0],
        "dt": 0.02,
        "replicates": 8,
        "mode": {"type": "window", "s1": 0.1, "s2": 0.9},
        "levels": [0.05],
        "master_seed": 3,
        "bridge": {"m": 150, "reps": 200}
    }"#;
    let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
    cfg.validate().unwrap();
    let result = oucp::experiments::run_null_study(&cfg).unwrap();
    assert_eq!(result.config_hash, cfg.hash());

    // Round-tripping the config through JSON must not change its identity.
    let back: ExperimentConfig =
        serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back.hash(), cfg.hash());

    // And the result itself must survive serialization.
    let json = serde_json::to_string(&result).unwrap();
    let reparsed: oucp::ExperimentResult = serde_json::from_str(&json).unwrap();
    assert_eq!(reparsed, result);
}

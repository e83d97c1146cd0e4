use std::fs;
use std::path::PathBuf;

use cpsgd::compression::CompressorKind;
use cpsgd::diagnostics::CSV_HEADER;
use cpsgd::harness::{
    compute_references, load_config, run_experiment, speedup_sweep, AlgorithmEntry,
    ExperimentConfig, HarnessError,
};
use cpsgd::optimizers::{Algorithm, Schedule};

fn baseline_config() -> ExperimentConfig {
    let path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/logistic_baselines.json");
    let mut cfg = load_config(&path).unwrap();
    cfg.rounds = 40;
    cfg
}

fn read(path: &std::path::Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn baseline_config_writes_one_trace_per_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = baseline_config();
    let out = run_experiment(&cfg, dir.path()).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    let labels: Vec<_> = out.traces.iter().map(|(l, _, _)| l.as_str()).collect();
    assert_eq!(
        labels,
        [
            "DSGD",
            "Choco-SGD-C1",
            "CP-SGD-F-C1",
            "CP-SGD-F-C2",
            "CP-SGD-T-C1"
        ]
    );
    for (label, seed, csv) in &out.traces {
        let text = read(csv);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(lines.count(), 41);
        let meta: serde_json::Value =
            serde_json::from_str(&read(&csv.with_extension("json"))).unwrap();
        assert_eq!(meta["label"], label.as_str());
        assert_eq!(meta["seed"], *seed);
        assert_eq!(meta["rounds"], 40);
        assert_eq!(meta["n"], 6);
        assert!(meta["f_star"].as_f64().is_some());
    }
    assert!(dir.path().join("summary.json").exists());
    assert_eq!(read(&dir.path().join("failures.json")).trim(), "[]");
    assert!(dir.path().join("reference_seed0.json").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = baseline_config();
    let ra = run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    for (_, _, csv) in &ra.traces {
        let name = csv.file_name().unwrap();
        assert_eq!(
            fs::read(csv).unwrap(),
            fs::read(b.path().join(name)).unwrap()
        );
    }
}

#[test]
fn summary_aggregates_over_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = baseline_config();
    cfg.seeds = vec![0, 1, 2];
    cfg.algorithms.truncate(1);
    let out = run_experiment(&cfg, dir.path()).unwrap();
    let finals: Vec<f64> = out
        .traces
        .iter()
        .map(|(_, _, csv)| {
            let text = read(csv);
            let last = text.lines().last().unwrap();
            last.split(',').nth(3).unwrap().parse().unwrap()
        })
        .collect();
    let s = out.summary[0].final_grad_norm_sq.as_ref().unwrap();
    assert_eq!(out.summary[0].seeds, vec![0, 1, 2]);
    assert!((s.mean - finals.iter().sum::<f64>() / 3.0).abs() <= 1e-15 * s.mean.abs().max(1.0));
    assert_eq!(s.min, finals.iter().cloned().fold(f64::INFINITY, f64::min));
    assert_eq!(
        s.max,
        finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    );
    let bits = out.summary[0].bits_total.as_ref().unwrap();
    assert_eq!(bits.mean, (40 * 6 * 320) as f64);
}

fn diverging() -> AlgorithmEntry {
    AlgorithmEntry {
        label: "blowup".into(),
        algorithm: Algorithm::CpSgd {
            compressor: CompressorKind::TopK { k: 2 },
            schedule: Schedule::Constant {
                eta: 1.0,
                gamma: 1e200,
                omega: 0.5,
                alpha_x: 0.2,
            },
        },
    }
}

#[test]
fn one_failing_run_does_not_stop_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = baseline_config();
    cfg.algorithms.truncate(2);
    cfg.algorithms.insert(1, diverging());
    let out = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(out.traces.len(), 2);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].label, "blowup");
    assert!(out.failures[0].error.contains("non-finite"));
    assert!(!dir.path().join("blowup_seed0.csv").exists());
    assert!(read(&dir.path().join("failures.json")).contains("blowup"));
}

#[test]
fn all_runs_failing_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = baseline_config();
    cfg.algorithms = vec![diverging()];
    assert!(matches!(
        run_experiment(&cfg, dir.path()),
        Err(HarnessError::AllRunsFailed(1))
    ));
}

#[test]
fn reference_cache_is_reused_and_invalidated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = baseline_config();
    let first = compute_references(&cfg, dir.path()).unwrap();
    let path = dir.path().join("reference_seed0.json");
    let mut cached: serde_json::Value = serde_json::from_str(&read(&path)).unwrap();

    // a cache entry with the right fingerprint is trusted as is
    cached["reference"]["f_star"] = serde_json::json!(123.0);
    fs::write(&path, cached.to_string()).unwrap();
    assert_eq!(
        compute_references(&cfg, dir.path()).unwrap()[0].1.f_star,
        123.0
    );

    // a stale fingerprint forces a fresh solve
    cached["fingerprint"] = serde_json::json!("stale");
    fs::write(&path, cached.to_string()).unwrap();
    assert_eq!(compute_references(&cfg, dir.path()).unwrap(), first);
}

#[test]
fn config_survives_serialization() {
    let cfg = baseline_config();
    let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(again.to_json(), cfg.to_json());
}

#[test]
fn relative_output_dir_follows_the_config_file() {
    let cfg = baseline_config();
    let dir = cfg.resolve_output_dir(None);
    assert!(
        dir.ends_with("runs/logistic_baselines"),
        "{}",
        dir.display()
    );
    assert!(dir.starts_with(env!("CARGO_MANIFEST_DIR")));
}

#[test]
fn invalid_file_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut cfg = baseline_config();
    cfg.seeds.clear();
    fs::write(&path, cfg.to_json()).unwrap();
    match load_config(&path) {
        Err(HarnessError::Validation { path, .. }) => assert_eq!(path, "seeds"),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn sweep_needs_its_section_and_reports_every_agent_count() {
    let mut cfg = baseline_config();
    assert!(matches!(
        speedup_sweep(&cfg, &[2, 4], 50, None),
        Err(HarnessError::Sweep(_))
    ));
    cfg.sweep = Some(serde_json::from_str(r#"{"compressor": {"kind": "top_k", "k": 2}, "beta1": 1.0, "beta2": 0.1, "alpha_x": 0.5}"#).unwrap());
    let s = speedup_sweep(&cfg, &[2, 4], 50, None).unwrap();
    assert_eq!(s.rows.iter().map(|r| r.n).collect::<Vec<_>>(), [2, 4]);
    for r in &s.rows {
        assert!((r.eta - (r.n as f64 / 50.0).sqrt()).abs() < 1e-12);
        assert!((r.gamma - r.omega).abs() < 1e-12);
    }
}

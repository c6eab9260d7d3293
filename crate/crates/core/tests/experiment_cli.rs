//! Sweeps end to end: artifacts, determinism, reloading and the CLI.

use std::path::Path;
use std::process::Command;

use fairdp::experiment::{
    emit_disparity_curves, emit_table, execute_sweep, load_summary, reaggregate, render_curves,
    run_sweep, CurveFormat, ExperimentConfig, SweepSummary, TableFormat,
};
use fairdp::Objective;

const SYNTHETIC: &str = r#"
name = "small-grid"
seeds = [0, 1]
objectives = ["ERM", "GroupDRO"]

[data]
kind = "synthetic"
test_sizes = [40, 40, 40, 40]
[data.spec]
group_sizes = [120, 8, 120, 40]
extra_noise_dims = 2

[model]
family = "logistic_classifier"

[training]
steps = 40
lr = 0.2
batch_size = 32

[[privacy]]
label = "No DP"

[[privacy]]
label = "eps=1"
target_epsilon = 1.0
"#;

const PRICES: &str = r#"
name = "volatility"
seeds = [0, 1]
objectives = ["ERM"]

[data]
kind = "prices"
taus = [3, 7, 15]
[data.simulate]
groups = ["M", "F"]
series_per_group = [3, 1]
days = 120
mean_log_vol = [-4.2, -3.8]
vol_of_vol = [0.15, 0.35]
persistence = 0.95
seed = 3

[model]
family = "linear_regressor"

[training]
steps = 30
lr = 0.05
batch_size = 32

[[privacy]]
label = "No DP"

[[privacy]]
label = "eps=5"
target_epsilon = 5.0
"#;

fn config_in(dir: &Path, text: &str) -> ExperimentConfig {
    let path = dir.join("sweep.toml");
    std::fs::write(&path, text).unwrap();
    ExperimentConfig::from_path(&path).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for name in ["config.json", "summary.json"] {
        out.push((name.to_string(), std::fs::read(dir.join(name)).unwrap()));
    }
    let mut runs: Vec<_> = std::fs::read_dir(dir.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    runs.sort();
    for p in runs {
        out.push((p.file_name().unwrap().to_string_lossy().into(), std::fs::read(&p).unwrap()));
    }
    out
}

#[test]
fn grid_size_and_privacy_invariants() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config_in(tmp.path(), SYNTHETIC);
    cfg.output_dir = tmp.path().join("out");
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(out.reports.len(), 8);
    assert_eq!(std::fs::read_dir(tmp.path().join("out/runs")).unwrap().count(), 8);
    for r in &out.reports {
        let m = r.metrics().expect("run completed");
        assert_eq!(m.realized_epsilon.is_some(), r.privacy_label == "eps=1");
        if let Some(eps) = m.realized_epsilon {
            assert!((0.995..=1.0).contains(&eps));
        }
        assert_eq!(r.group_tokens, ["a0_y0", "a0_y1", "a1_y0", "a1_y1"]);
    }
    let cell = out.summary.cell(Objective::GroupDro, "eps=1", None).unwrap();
    assert_eq!(cell.seeds_completed, 2);
    assert!(cell.noise_multiplier.unwrap() > 0.0);
}

#[test]
fn repeated_sweeps_write_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config_in(tmp.path(), SYNTHETIC);
    cfg.output_dir = tmp.path().join("a");
    run_sweep(&cfg).unwrap();
    cfg.output_dir = tmp.path().join("b");
    run_sweep(&cfg).unwrap();
    let (a, b) = (files(&tmp.path().join("a")), files(&tmp.path().join("b")));
    assert_eq!(a.len(), 10);
    assert_eq!(a, b);
}

#[test]
fn persisted_sweep_reloads_to_the_same_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config_in(tmp.path(), SYNTHETIC);
    cfg.output_dir = tmp.path().join("out");
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(reaggregate(&cfg.output_dir).unwrap(), out.summary);
    assert_eq!(load_summary(&cfg.output_dir).unwrap(), out.summary);
    let json = emit_table(&out.summary, TableFormat::Json).unwrap();
    let back: SweepSummary = serde_json::from_str(&json).unwrap();
    assert_eq!(back, out.summary);
    let text = emit_table(&out.summary, TableFormat::Text).unwrap();
    assert!(text.contains("Performance") && text.contains("Group disparity"));
    assert!(text.contains("(ε=0.99)") || text.contains("(ε=1.00)"), "{text}");
}

#[test]
fn volatility_sweep_gives_one_curve_per_level() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), PRICES);
    let out = execute_sweep(&cfg).unwrap();
    assert_eq!(out.reports.len(), 2 * 3 * 2);
    assert_eq!(out.summary.failed_cells(), 0);
    let curves = emit_disparity_curves(&out.summary).unwrap();
    assert_eq!(curves.series.len(), 2);
    for s in &curves.series {
        assert_eq!(s.points.iter().map(|p| p.tau).collect::<Vec<_>>(), vec![3, 7, 15]);
    }
    let again = emit_disparity_curves(&execute_sweep(&cfg).unwrap().summary).unwrap();
    assert_eq!(render_curves(&curves, CurveFormat::Json), render_curves(&again, CurveFormat::Json));
    assert_eq!(render_curves(&curves, CurveFormat::Csv), render_curves(&again, CurveFormat::Csv));
}

fn fairdp(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fairdp")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.toml");
    std::fs::write(&good, SYNTHETIC).unwrap();
    let out_dir = tmp.path().join("out");
    let run = fairdp(&["run", good.to_str().unwrap(), "--output", out_dir.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("Group disparity"));

    let report = fairdp(&["report", out_dir.to_str().unwrap(), "--format", "json"]);
    assert_eq!(report.status.code(), Some(0));
    let parsed: SweepSummary = serde_json::from_slice(&report.stdout).unwrap();
    assert_eq!(parsed, load_summary(&out_dir).unwrap());

    let curves = fairdp(&["curves", out_dir.to_str().unwrap()]);
    assert_eq!(curves.status.code(), Some(1));

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, SYNTHETIC.replace("lr = 0.2", "lr = 0.2\nmomentum = 0.9")).unwrap();
    let run = fairdp(&["run", bad.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    let err = String::from_utf8_lossy(&run.stderr);
    assert!(err.contains("momentum") && err.contains("line"), "{err}");

    let partial = tmp.path().join("partial.toml");
    std::fs::write(&partial, SYNTHETIC.replace("target_epsilon = 1.0", "target_epsilon = 1e-9")).unwrap();
    let run = fairdp(&["run", partial.to_str().unwrap(), "--output", tmp.path().join("p").to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));

    let missing = fairdp(&["report", tmp.path().join("nothing").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(3));

    let cal = fairdp(&["calibrate", "--epsilon", "5", "--sampling-rate", "0.01", "--steps", "1000"]);
    assert_eq!(cal.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&cal.stdout).contains("noise_multiplier = "));

    assert_eq!(fairdp(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn shipped_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["synthetic.toml", "volatility.toml"] {
        let cfg = ExperimentConfig::from_path(dir.join(name)).unwrap();
        cfg.validate().unwrap();
    }
}

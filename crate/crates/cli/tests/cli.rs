use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use repmarket::experiments::replication::records_table;
use repmarket::metrics::OutcomeRecord;
use repmarket::table::{fmt_f64, Table};
use repmarket_cli::output::Manifest;
use repmarket_cli::{dispatch, EXIT_MISMATCH, EXIT_NUMERIC, EXIT_USAGE};

const SMALL: &str = "[run]\nn_agents = 4\nn_steps = 400\nburn_in = 200\n\n[experiment]\nreps = 2\n";

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["repmarket"];
    argv.extend_from_slice(args);
    dispatch(argv)
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--seed", "7", "--out", s(&a)]), 0);
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--seed", "7", "--out", s(&b)]), 0);
    for f in ["timeseries.tsv", "agents.tsv", "record.tsv", "summary.txt", "config.toml", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ts = Table::read(&a.join("timeseries.tsv")).unwrap();
    assert_eq!(ts.len(), 400);
    let m = Manifest::read(&a).unwrap();
    assert_eq!(m.seed, 7);
    assert_eq!(m.command, "simulate");
}

#[test]
fn different_seed_changes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--seed", "1", "--out", s(&a)]), 0);
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--seed", "2", "--out", s(&b)]), 0);
    assert_ne!(fs::read(a.join("timeseries.tsv")).unwrap(), fs::read(b.join("timeseries.tsv")).unwrap());
}

#[test]
fn existing_manifest_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&out)]), 0);
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&out)]), EXIT_USAGE);
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&out), "--force", "--rep", "1"]), 0);
    let m = Manifest::read(&out).unwrap();
    assert!(m.args.contains(&"1".to_string()));
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let root = tmp.path().join("root");
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--seed", "5", "--out-root", s(&root)]), 0);
    assert!(root.join("simulate-5").join("manifest.json").exists());
}

#[test]
fn usage_errors_exit_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["simulate", "--no-such-flag"]), EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[run]\nn_agents = \"many\"\n").unwrap();
    assert_eq!(run(&["simulate", "--config", s(&bad), "--out", s(&tmp.path().join("x"))]), EXIT_USAGE);
    let unknown = tmp.path().join("unknown.toml");
    fs::write(&unknown, "[run]\nflux = 1\n").unwrap();
    assert_eq!(run(&["simulate", "--config", s(&unknown), "--out", s(&tmp.path().join("y"))]), EXIT_USAGE);
    let missing = tmp.path().join("nope.tsv");
    assert_eq!(run(&["calibrate", "--targets", s(&missing), "--out", s(&tmp.path().join("z"))]), EXIT_USAGE);
    assert!(!tmp.path().join("z").exists());
}

#[test]
fn abort_ceiling_gives_numeric_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("explode.toml");
    fs::write(
        &cfg,
        "[run]\nn_agents = 4\nn_steps = 400\nburn_in = 200\n\n[run.pricing]\nsigma_eps = 1e307\n\n[experiment]\nreps = 2\nabort_ceiling = 0.0\n",
    )
    .unwrap();
    let out = tmp.path().join("x");
    assert_eq!(run(&["controls", "--config", s(&cfg), "--out", s(&out)]), EXIT_NUMERIC);
    assert!(!out.exists());
}

#[test]
fn scan_writes_requested_points() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("scan");
    assert_eq!(run(&["scan", "--config", s(&cfg), "--points", "15", "--reps", "1", "--out", s(&out)]), 0);
    assert_eq!(Table::read(&out.join("scan.tsv")).unwrap().len(), 15);
    assert_eq!(Table::read(&out.join("scan_records.tsv")).unwrap().len(), 15);
}

/// Per-replication scan table with a kink at d = 0.5 in `crash_freq`.
pub fn kink_fixture(path: &Path) {
    let mut rng = repmarket::rng::seeded_rng(11, 0);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut rows = Vec::new();
    for i in 0..41 {
        let d = 1.0 - i as f64 * 0.025;
        let y = if d > 0.5 { 1.0 } else { 1.0 + 10.0 * (0.5 - d) } + noise.sample(&mut rng);
        let mut v = [f64::NAN; 14];
        v[7] = y;
        v[12] = d;
        let rec = OutcomeRecord::from_values(&v, false).unwrap();
        rows.push((vec![i.to_string(), fmt_f64(d), "0".to_string()], rec));
    }
    records_table(&["point", "w_sigma", "rep"], &rows).write(path).unwrap();
}

#[test]
fn threshold_recovers_fixture_kink() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = tmp.path().join("scan.tsv");
    kink_fixture(&fixture);
    let out = tmp.path().join("thr");
    let code = run(&["threshold", "--input", s(&fixture), "--method", "segmented", "--outcome", "crash_freq", "--out", s(&out)]);
    assert_eq!(code, 0);
    let t = Table::read(&out.join("thresholds.tsv")).unwrap();
    let d = t.column_f64("d_crit").unwrap()[0];
    assert!((d - 0.5).abs() < 0.05, "d_crit {d}");
    let m = Manifest::read(&out).unwrap();
    assert_eq!(m.inputs.len(), 1);
}

#[test]
fn factorial_export_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let fac = tmp.path().join("fac");
    assert_eq!(run(&["factorial", "--config", s(&cfg), "--out", s(&fac)]), 0);
    let (e1, e2) = (tmp.path().join("e1"), tmp.path().join("e2"));
    assert_eq!(run(&["export", "--run", s(&fac), "--what", "factorial-table", "--out", s(&e1)]), 0);
    assert_eq!(run(&["export", "--run", s(&fac), "--what", "factorial-table", "--out", s(&e2)]), 0);
    let eff = Table::read(&e1.join("factorial_effects.tsv")).unwrap();
    assert_eq!(eff.len(), 8);
    let long = Table::read(&e1.join("factorial_long.tsv")).unwrap();
    assert_eq!(long.len(), 8 * 2 * OutcomeRecord::FIELDS.len());
    for f in ["factorial_effects.tsv", "factorial_long.tsv"] {
        assert_eq!(fs::read(e1.join(f)).unwrap(), fs::read(e2.join(f)).unwrap());
    }
    assert_eq!(run(&["replay", "--run", s(&fac)]), 0);
    fs::write(fac.join("effects.tsv"), "tampered\n").unwrap();
    assert_eq!(run(&["replay", "--run", s(&fac)]), EXIT_MISMATCH);
}

#[test]
fn export_needs_a_manifest_and_the_right_table() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let err = repmarket_cli::output::Manifest::read(&empty).unwrap_err().to_string();
    assert!(err.contains("manifest.json"), "{err}");
    assert_eq!(run(&["export", "--run", s(&empty), "--what", "timeseries", "--out", s(&tmp.path().join("x"))]), EXIT_USAGE);
    let cfg = small_config(tmp.path());
    let sim = tmp.path().join("sim");
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&sim)]), 0);
    assert_eq!(run(&["export", "--run", s(&sim), "--what", "scan-curve", "--out", s(&tmp.path().join("y"))]), EXIT_USAGE);
    let ts = tmp.path().join("ts");
    assert_eq!(run(&["export", "--run", s(&sim), "--what", "timeseries", "--out", s(&ts)]), 0);
    assert_eq!(Table::read(&ts.join("timeseries_long.tsv")).unwrap().len(), 400 * 9);
}

#[test]
fn metrics_and_convergence_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let m = tmp.path().join("m");
    assert_eq!(run(&["metrics", "--config", s(&cfg), "--measure", "grid", "--aligned", "--out", s(&m)]), 0);
    assert_eq!(Table::read(&m.join("pairs.tsv")).unwrap().len(), 6);
    let c = tmp.path().join("c");
    assert_eq!(run(&["converge", "--config", s(&cfg), "--steps", "500", "--nu", "0,0.1", "--out", s(&c)]), 0);
    let e = tmp.path().join("ce");
    assert_eq!(run(&["export", "--run", s(&c), "--what", "convergence-panel", "--out", s(&e)]), 0);
    assert!(Table::read(&e.join("convergence_long.tsv")).unwrap().len() > 0);
}

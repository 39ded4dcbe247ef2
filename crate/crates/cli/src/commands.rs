//! Subcommand bodies. Each writes its tables into a [`RunDir`] and returns
//! the human-readable summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use repmarket::agents::DriftSpec;
use repmarket::calibration::{calibrate, synthetic_targets, SmmConfig, Targets};
use repmarket::experiments::controls::{controls_table, run_negative_controls};
use repmarket::experiments::convergence::{run_convergence, ConvergenceOptions};
use repmarket::experiments::matched::{build_matched_design, candidate_pool, design_measure, run_matched_experiment, PoolKind};
use repmarket::experiments::stress::{run_stress_suite, StressSpecs};
use repmarket::experiments::threshold::{thresholds_table, ScanSeries};
use repmarket::experiments::{
    estimate_threshold, run_factorial, run_replication, run_scan, ControlMode, ScanResult, ThresholdMethod, ThresholdOutcome,
};
use repmarket::metrics::{distance_report, outcome_record, ReferenceMeasure, ReportOptions};
use repmarket::sim::{Simulation, Trajectory};
use repmarket::state::PricingParams;
use repmarket::table::{fmt_f64, Table};
use repmarket::Config;

use crate::output::{sha256_file, InputEntry, Manifest, RunDir, CONFIG_FILE, SUMMARY_FILE};
use crate::{default_out, Cli, CliError, Command, MeasureArg, MethodArg, ModeArg, PoolArg};

/// Runs every command except `replay`.
pub fn execute(cli: &Cli, cfg: &Config, args: Vec<String>) -> Result<String, CliError> {
    let name = cli.command.name();
    let seed = cfg.run.seed;
    let target = match &cli.command {
        Command::Export(a) if cli.global.out.is_none() => {
            let stem = a.run.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
            cli.global.out_root.join(format!("export-{}-{stem}", a.what.name()))
        }
        _ => default_out(&cli.global, name, seed),
    };
    let mut dir = RunDir::create(&target, cli.global.force)?;
    let mut inputs = Vec::new();
    let result = body(&cli.command, cfg, &mut dir, &mut inputs);
    let summary = match result {
        Ok(s) => s,
        Err(e) => {
            dir.discard();
            return Err(e);
        }
    };
    dir.write_bytes(CONFIG_FILE, cfg.to_toml_string().as_bytes())?;
    let text = format!("command: {name}\nseed: {seed}\n{summary}");
    dir.write_bytes(SUMMARY_FILE, text.as_bytes())?;
    let path = dir.finish(name, args, seed, inputs)?;
    Ok(format!("{text}output: {}\n", path.display()))
}

fn body(cmd: &Command, cfg: &Config, dir: &mut RunDir, inputs: &mut Vec<InputEntry>) -> Result<String, CliError> {
    let reps = cfg.experiment.reps;
    let exp = &cfg.experiment;
    let mut s = String::new();
    match cmd {
        Command::Simulate(a) => {
            let out = run_replication(&cfg.run, a.rep, true)?;
            let traj = out.trajectory.ok_or_else(|| {
                repmarket::Error::Numeric { step: 0, what: out.abort_reason.clone().unwrap_or_else(|| "replication aborted".into()) }
            })?;
            dir.write_table("timeseries.tsv", &timeseries_table(&traj))?;
            dir.write_table("agents.tsv", &agents_table(&traj))?;
            dir.write_table("record.tsv", &record_table(&out.record))?;
            writeln!(s, "replication: {}", a.rep).ok();
            write_record(&mut s, &out.record);
        }
        Command::Calibrate(a) => s = calibrate_cmd(a, cfg, dir, inputs)?,
        Command::Factorial => {
            let run = run_factorial(&cfg.run, exp, reps)?;
            dir.write_table("records.tsv", &run.records_table())?;
            dir.write_table("cells.tsv", &run.cells_table())?;
            dir.write_table("effects.tsv", &run.estimates_table())?;
            writeln!(s, "replications per cell: {reps}").ok();
            writeln!(s, "incomplete replications: {}", run.incomplete).ok();
            let (hi, lo) = (repmarket::experiments::FactorialCell::new(1, 1, 1), repmarket::experiments::FactorialCell::new(0, 0, 0));
            for field in ["rho_position", "crash_freq"] {
                match run.paired_contrast(hi, lo, field) {
                    Some(c) => writeln!(
                        s,
                        "{field} 111-000: diff {} se {} separated at 2 se: {}",
                        fmt_f64(c.diff),
                        fmt_f64(c.se),
                        if c.separated(2.0) { "yes" } else { "no" }
                    )
                    .ok(),
                    None => writeln!(s, "{field} 111-000: not estimable").ok(),
                };
            }
        }
        Command::Scan(a) => {
            let n = a.points.unwrap_or(exp.scan_points);
            let mode = match a.mode {
                ModeArg::Heterogeneous => ControlMode::Heterogeneous,
                ModeArg::Uniform => ControlMode::Uniform,
            };
            let scan = run_scan(&cfg.run, exp, n, exp.w_sigma_wide, exp.w_sigma_tight, mode, reps)?;
            dir.write_table("scan.tsv", &scan.summary_table())?;
            dir.write_table("scan_records.tsv", &scan.records_table())?;
            writeln!(s, "points: {n}\nreplications per point: {reps}").ok();
            let d = scan.d_repr();
            writeln!(s, "realized d_repr from {} to {}", fmt_f64(d[0]), fmt_f64(d[d.len() - 1])).ok();
        }
        Command::Threshold(a) => {
            let path = if a.input.is_dir() { a.input.join("scan_records.tsv") } else { a.input.clone() };
            if !path.exists() {
                return Err(repmarket::Error::MissingArtifact(path).into());
            }
            inputs.push(InputEntry { path: path.canonicalize()?.display().to_string(), sha256: sha256_file(&path)? });
            let table = Table::read(&path)?;
            let scan = ScanResult::from_records_table(&table, ControlMode::Heterogeneous)?;
            let series = ScanSeries::from_scan(&scan, &a.outcome)?;
            let methods: Vec<ThresholdMethod> = match a.method {
                MethodArg::Segmented => vec![ThresholdMethod::Segmented],
                MethodArg::Spline => vec![ThresholdMethod::SplineCurvature],
                MethodArg::Event => vec![ThresholdMethod::EventCrossing],
                MethodArg::All => ThresholdMethod::ALL.to_vec(),
            };
            let multiple = a.event_multiple.unwrap_or(exp.event_multiple);
            let results = methods.iter().map(|m| estimate_threshold(&series, *m, multiple)).collect::<Result<Vec<_>, _>>()?;
            dir.write_table("thresholds.tsv", &thresholds_table(&results))?;
            writeln!(s, "outcome: {}", a.outcome).ok();
            for r in &results {
                match r {
                    ThresholdOutcome::Found(e) => writeln!(s, "{}: d_crit {}", e.method.name(), fmt_f64(e.d_crit)).ok(),
                    ThresholdOutcome::NoThreshold { method, reason, .. } => {
                        writeln!(s, "{}: no threshold ({reason})", method.name()).ok()
                    }
                };
            }
        }
        Command::Matched(a) => {
            let kind = match a.pool {
                PoolArg::Random => PoolKind::Random,
                PoolArg::Compensating => PoolKind::Compensating,
            };
            let n = a.candidates.unwrap_or(exp.n_candidates);
            let mu = design_measure(&cfg.run)?;
            let pool = candidate_pool(&cfg.run, exp, kind, n, &mu)?;
            let design = build_matched_design(&pool, exp)?;
            let res = run_matched_experiment(
                &cfg.run,
                &design,
                exp.calm_steps,
                exp.stress_steps,
                exp.stress_scale,
                reps,
                exp.abort_ceiling,
            )?;
            dir.write_table("design.tsv", &design.table())?;
            dir.write_table("comparisons.tsv", &res.comparison_table())?;
            dir.write_table("records.tsv", &res.records_table())?;
            writeln!(s, "design mode: {:?}", design.mode).ok();
            writeln!(s, "strict yield: {} of {} forecast-matched pairs", fmt_f64(design.strict_yield), design.pairs_examined).ok();
            writeln!(s, "d_fc: {} vs {}", fmt_f64(design.d_fc_a), fmt_f64(design.d_fc_b)).ok();
            writeln!(s, "d_repr: {} vs {}", fmt_f64(design.d_repr_a), fmt_f64(design.d_repr_b)).ok();
            writeln!(s, "calm phase matched: {}", res.matched_ok).ok();
            writeln!(s, "stress comparisons evidential: {}", res.evidential).ok();
        }
        Command::Converge(a) => {
            let nus = if a.nu.is_empty() { exp.convergence_nu.clone() } else { a.nu.clone() };
            let scenarios: Vec<DriftSpec> = nus
                .iter()
                .map(|nu| DriftSpec { nu_w: *nu, sigma_w: exp.convergence_sigma_w, sigma_base: 0.0, dt: 1.0 })
                .collect();
            let opts = ConvergenceOptions {
                n_steps: a.steps.unwrap_or(exp.convergence_steps),
                window: exp.window,
                record_every: exp.record_every,
                d_crit: a.d_crit.or(exp.d_crit),
            };
            let res = run_convergence(&cfg.run, &scenarios, reps, &opts)?;
            dir.write_table("panel.tsv", &res.panel_table())?;
            dir.write_table("crossings.tsv", &res.crossings_table())?;
            for sc in &res.scenarios {
                let d = sc.mean_path(0);
                writeln!(
                    s,
                    "nu_w {}: d_repr {} -> {}",
                    fmt_f64(sc.drift.nu_w),
                    fmt_f64(d.first().copied().unwrap_or(f64::NAN)),
                    fmt_f64(sc.late_mean(0, 0.1))
                )
                .ok();
            }
        }
        Command::Controls => {
            let res = run_negative_controls(&cfg.run, exp, reps)?;
            dir.write_table("controls.tsv", &controls_table(&res))?;
            for r in &res {
                let p = r.paired();
                let get = |f: &str| p.iter().find(|x| x.0 == f).map_or(f64::NAN, |x| x.3);
                writeln!(
                    s,
                    "{}: d_repr diff {} rho_position diff {}",
                    r.kind.name(),
                    fmt_f64(get("d_repr_mean")),
                    fmt_f64(get("rho_position"))
                )
                .ok();
            }
        }
        Command::Stress => {
            let specs = StressSpecs::from_settings(&cfg.run, exp);
            let res = run_stress_suite(&cfg.run, exp, &specs, reps)?;
            dir.write_table("stress_summary.tsv", &res.summary_table())?;
            dir.write_table("stress_deltas.tsv", &res.deltas_table())?;
            writeln!(s, "runs: {}\nreplications per run: {reps}", res.runs.len()).ok();
        }
        Command::Metrics(a) => s = metrics_cmd(a, cfg, dir)?,
        Command::Export(a) => s = crate::export::export(&a.run, a.what, dir, inputs)?,
        Command::Replay(_) => unreachable!("replay is handled before a run directory is created"),
    }
    Ok(s)
}

fn calibrate_cmd(a: &crate::CalibrateArgs, cfg: &Config, dir: &mut RunDir, inputs: &mut Vec<InputEntry>) -> Result<String, CliError> {
    let mut cal = cfg.calibration.clone();
    if let Some(v) = a.sobol {
        cal.n_sobol = v;
    }
    if let Some(v) = a.starts {
        cal.n_local_starts = v;
    }
    if let Some(v) = a.bootstrap {
        cal.n_bootstrap = v;
    }
    if let Some(v) = a.local_evals {
        cal.local_max_evals = v;
    }
    let seed = cfg.run.seed;
    let (targets, truth) = match &a.targets {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::Usage(format!("target file {} not found", p.display())));
            }
            inputs.push(InputEntry { path: p.canonicalize()?.display().to_string(), sha256: sha256_file(p)? });
            (Targets::read(p)?, None)
        }
        None => {
            let t = synthetic_targets(
                &cfg.run,
                &cal.target_theta,
                cal.target_reps,
                cal.sim_steps,
                cal.sim_burn_in,
                seed.wrapping_add(cal.target_seed_offset),
                200,
            )?;
            (t, Some(cal.target_theta))
        }
    };
    dir.write_table("targets.tsv", &targets.to_table())?;
    let mut s = String::new();
    if a.targets_only {
        writeln!(s, "targets written from theta*").ok();
        return Ok(s);
    }
    let smm = SmmConfig::new(&cfg.run, &cal, targets.clone())?;
    let res = calibrate(&smm, seed)?;
    dir.write_table("estimates.tsv", &res.estimates_table(truth.as_ref()))?;
    dir.write_table("trace.tsv", &res.trace_table())?;
    let mut mt = Table::new(&["moment", "target", "se", "simulated"]);
    let tv = targets.moments.to_array();
    let sim = res.moments_at_hat.map(|m| m.to_array());
    for k in 0..8 {
        mt.rows.push(vec![
            repmarket::calibration::MomentVector::NAMES[k].to_string(),
            fmt_f64(tv[k]),
            fmt_f64(targets.se.map_or(f64::NAN, |x| x[k])),
            fmt_f64(sim.map_or(f64::NAN, |x| x[k])),
        ]);
    }
    dir.write_table("moments.tsv", &mt)?;
    writeln!(s, "objective: {} (best Sobol point {})", fmt_f64(res.objective), fmt_f64(res.stage1_best)).ok();
    let est = res.theta_hat.to_array();
    for k in 0..8 {
        write!(s, "{}: {} [{}, {}]", PricingParams::NAMES[k], fmt_f64(est[k]), fmt_f64(res.ci[k].0), fmt_f64(res.ci[k].1)).ok();
        if let Some(t) = truth {
            let tv = t.to_array()[k];
            write!(s, " truth {} rel err {:.3}", fmt_f64(tv), est[k] / tv - 1.0).ok();
        }
        s.push('\n');
    }
    Ok(s)
}

fn metrics_cmd(a: &crate::MetricsArgs, cfg: &Config, dir: &mut RunDir) -> Result<String, CliError> {
    let run = &cfg.run;
    let mut sim = Simulation::new(run, a.rep)?;
    sim.run_to_end()?;
    let traj = sim.trajectory();
    let from = run.burn_in;
    let mu = match a.measure {
        MeasureArg::Empirical => ReferenceMeasure::empirical(traj, from, run.metrics.measure_states)?,
        MeasureArg::Grid => ReferenceMeasure::axis_grid(traj, from, &[-2.0, -1.0, 0.0, 1.0, 2.0])?,
        MeasureArg::Stress => ReferenceMeasure::stress_weighted(traj, from, run.metrics.measure_states, run.metrics.stress_weight)?,
    };
    let opts = ReportOptions { aligned: a.aligned, ..Default::default() };
    let rep = distance_report(sim.agents(), &mu, run.activation, &opts)?;
    let n = sim.agents().len();
    let mut pairs = Table::new(&["i", "j", "d_repr", "d_forecast", "d_risk", "d_repr_aligned", "composite", "homogeneity"]);
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.rows.push(vec![
                i.to_string(),
                j.to_string(),
                fmt_f64(rep.d_repr[(i, j)]),
                fmt_f64(rep.d_forecast[(i, j)]),
                fmt_f64(rep.d_risk[(i, j)]),
                fmt_f64(rep.d_repr_aligned[(i, j)]),
                fmt_f64(rep.composite[(i, j)]),
                fmt_f64(rep.homogeneity[(i, j)]),
            ]);
        }
    }
    dir.write_table("pairs.tsv", &pairs)?;
    let record = outcome_record(traj, from..run.n_steps, run.metrics.crash_k)?;
    let mut m = Table::new(&["metric", "value"]);
    let scalars = [
        ("d_repr_mean", rep.d_repr_mean),
        ("d_forecast_mean", rep.d_forecast_mean),
        ("d_risk_mean", rep.d_risk_mean),
        ("d_repr_aligned_mean", rep.d_repr_aligned_mean),
        ("homogeneity_mean", rep.homogeneity_mean),
    ];
    for (k, v) in scalars {
        m.rows.push(vec![k.into(), fmt_f64(v)]);
    }
    for (k, v) in repmarket::metrics::OutcomeRecord::FIELDS.iter().zip(record.values()).take(12) {
        m.rows.push(vec![k.to_string(), fmt_f64(v)]);
    }
    dir.write_table("metrics.tsv", &m)?;
    let mut s = String::new();
    writeln!(s, "replication: {}\nmeasure: {:?} ({} states)", a.rep, mu.kind, mu.len()).ok();
    for (k, v) in scalars {
        writeln!(s, "{k}: {}", fmt_f64(v)).ok();
    }
    Ok(s)
}

pub fn timeseries_table(tr: &Trajectory) -> Table {
    let mut t = Table::new(&[
        "t",
        "price",
        "ret",
        "flow",
        "inventory",
        "lambda",
        "psi",
        "vol",
        "shock",
        "forecast_dispersion",
    ]);
    for k in 0..tr.len() {
        let get = |v: &Vec<f64>| v.get(k).copied().map_or("NA".to_string(), fmt_f64);
        t.rows.push(vec![
            (k + 1).to_string(),
            get(&tr.prices),
            get(&tr.returns),
            get(&tr.flows),
            get(&tr.inventories),
            get(&tr.lambdas),
            get(&tr.psis),
            get(&tr.vols),
            get(&tr.shocks),
            get(&tr.forecast_dispersion),
        ]);
    }
    t
}

pub fn agents_table(tr: &Trajectory) -> Table {
    let mut t = Table::new(&["t", "agent", "forecast", "position", "trade"]);
    for k in 0..tr.len() {
        for i in 0..tr.positions.len() {
            t.rows.push(vec![
                (k + 1).to_string(),
                i.to_string(),
                fmt_f64(tr.forecasts[i][k]),
                fmt_f64(tr.positions[i][k]),
                fmt_f64(tr.trades[i][k]),
            ]);
        }
    }
    t
}

fn record_table(r: &repmarket::metrics::OutcomeRecord) -> Table {
    repmarket::experiments::replication::records_table(&[], &[(vec![], *r)])
}

fn write_record(s: &mut String, r: &repmarket::metrics::OutcomeRecord) {
    for (k, v) in repmarket::metrics::OutcomeRecord::FIELDS.iter().zip(r.values()) {
        writeln!(s, "{k}: {}", fmt_f64(v)).ok();
    }
}

/// Re-runs a directory into a scratch location and compares file digests.
pub fn replay(run: &Path) -> Result<String, CliError> {
    let manifest = Manifest::read(run)?;
    if manifest.command == "replay" {
        return Err(CliError::Usage("cannot replay a replay".into()));
    }
    let cfg_path = run.join(CONFIG_FILE);
    if !cfg_path.exists() {
        return Err(repmarket::Error::MissingArtifact(cfg_path).into());
    }
    for inp in &manifest.inputs {
        let p = PathBuf::from(&inp.path);
        if !p.exists() {
            return Err(repmarket::Error::MissingArtifact(p).into());
        }
        if sha256_file(&p)? != inp.sha256 {
            return Err(CliError::Mismatch(format!("input {} changed since the run", inp.path)));
        }
    }
    for f in &manifest.files {
        let p = run.join(&f.name);
        if !p.exists() {
            return Err(repmarket::Error::MissingArtifact(p).into());
        }
        if sha256_file(&p)? != f.sha256 {
            return Err(CliError::Mismatch(format!("{} no longer matches its manifest digest", f.name)));
        }
    }
    let scratch = std::env::temp_dir().join(format!("repmarket-replay-{}", std::process::id()));
    if scratch.exists() {
        fs::remove_dir_all(&scratch)?;
    }
    let mut argv = vec!["repmarket".to_string(), manifest.command.clone()];
    argv.extend(manifest.args.iter().cloned());
    argv.push("--config".into());
    argv.push(cfg_path.display().to_string());
    argv.push("--out".into());
    argv.push(scratch.display().to_string());
    let cli = <Cli as clap::Parser>::try_parse_from(&argv).map_err(|e| CliError::Usage(format!("stored arguments no longer parse: {e}")))?;
    let raw: Vec<String> = argv[1..].to_vec();
    let result = crate::run(&cli, &raw);
    let outcome = result.and_then(|_| {
        let fresh = Manifest::read(&scratch)?;
        let mut diffs = Vec::new();
        for f in &manifest.files {
            match fresh.file(&f.name) {
                Some(g) if g.sha256 == f.sha256 => {}
                Some(_) => diffs.push(format!("{} differs", f.name)),
                None => diffs.push(format!("{} not produced", f.name)),
            }
        }
        for g in &fresh.files {
            if manifest.file(&g.name).is_none() {
                diffs.push(format!("{} is new", g.name));
            }
        }
        if diffs.is_empty() {
            Ok(format!("replay of {}: {} files identical\n", run.display(), manifest.files.len()))
        } else {
            Err(CliError::Mismatch(diffs.join(", ")))
        }
    });
    let _ = fs::remove_dir_all(&scratch);
    outcome
}

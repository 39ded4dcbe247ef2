//! Simulated method of moments for the pricing block.
//!
//! Candidates are searched in log-parameter space mapped onto the unit cube:
//! a Sobol design first, then Nelder-Mead from the best design points. The
//! objective is a deterministic function of `(theta, seed)` because every
//! candidate is simulated on the same replication streams.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::moments::{compute_moments_pooled, MomentEstimate, MomentVector, Segment};
use super::nelder_mead::{self, NmOptions};
use super::sobol::Sobol;
use crate::config::{CalibrationSettings, RunConfig, WeightMatrix};
use crate::error::{Error, Result};
use crate::rng::{self, StreamKind};
use crate::sim::{RecordLevel, Simulation, Trajectory};
use crate::state::PricingParams;
use crate::stats;
use crate::table::{fmt_f64, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    File,
    Synthetic,
}

/// Target moments with optional standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub moments: MomentVector,
    pub se: Option<[f64; 8]>,
    pub reliable: [bool; 8],
    pub source: TargetSource,
}

impl Targets {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["moment", "value", "se"]);
        let v = self.moments.to_array();
        for k in 0..8 {
            let se = self.se.map_or(f64::NAN, |s| s[k]);
            t.rows.push(vec![MomentVector::NAMES[k].to_string(), fmt_f64(v[k]), fmt_f64(se)]);
        }
        t
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_table().write(path)
    }

    /// Reads a `moment value [se]` table. Every moment must be present once;
    /// the `se` column is optional and may hold `NaN` per row.
    pub fn read(path: &Path) -> Result<Self> {
        let t = Table::read(path)?;
        let parse_err = |msg: String| Error::Parse { path: path.display().to_string(), msg };
        let names = t.column("moment").map_err(|e| parse_err(e.to_string()))?;
        let values = t.column_f64("value").map_err(|e| parse_err(e.to_string()))?;
        let ses = if t.column_index("se").is_ok() {
            Some(t.column_f64("se").map_err(|e| parse_err(e.to_string()))?)
        } else {
            None
        };
        let mut m = [f64::NAN; 8];
        let mut s = [f64::NAN; 8];
        let mut seen = [false; 8];
        for (row, name) in names.iter().enumerate() {
            let k = MomentVector::NAMES
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| parse_err(format!("unknown moment '{name}'")))?;
            if seen[k] {
                return Err(parse_err(format!("moment '{name}' appears twice")));
            }
            seen[k] = true;
            m[k] = values[row];
            if let Some(se) = &ses {
                s[k] = se[row];
            }
        }
        if let Some(k) = seen.iter().position(|x| !x) {
            return Err(parse_err(format!("moment '{}' is missing", MomentVector::NAMES[k])));
        }
        let reliable = m.map(f64::is_finite);
        let se = if s.iter().all(|x| x.is_finite() && *x > 0.0) { Some(s) } else { None };
        Ok(Targets { moments: MomentVector::from_array(m), se, reliable, source: TargetSource::File })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmmConfig {
    /// Agent-side settings held fixed during calibration.
    pub base: RunConfig,
    pub targets: Targets,
    pub bounds: [(f64, f64); 8],
    pub n_sobol: usize,
    pub n_local_starts: usize,
    pub sim_steps: usize,
    pub sim_burn_in: usize,
    pub sim_reps: usize,
    pub n_bootstrap: usize,
    pub weight_matrix: WeightMatrix,
    pub local_max_evals: usize,
    pub bootstrap_max_evals: usize,
}

impl SmmConfig {
    pub fn new(base: &RunConfig, cal: &CalibrationSettings, targets: Targets) -> Result<Self> {
        let bounds: [(f64, f64); 8] = cal
            .bounds
            .clone()
            .try_into()
            .map_err(|_| Error::config("calibration needs exactly 8 parameter bounds"))?;
        let cfg = SmmConfig {
            base: base.clone(),
            targets,
            bounds,
            n_sobol: cal.n_sobol,
            n_local_starts: cal.n_local_starts,
            sim_steps: cal.sim_steps,
            sim_burn_in: cal.sim_burn_in,
            sim_reps: cal.sim_reps,
            n_bootstrap: cal.n_bootstrap,
            weight_matrix: cal.weight_matrix,
            local_max_evals: cal.local_max_evals,
            bootstrap_max_evals: cal.bootstrap_max_evals,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in PricingParams::NAMES.iter().zip(&self.bounds) {
            if !(*lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::config(format!("bounds for {name} must satisfy 0 < low <= high")));
            }
        }
        if self.n_sobol == 0 || self.n_local_starts == 0 || self.sim_reps == 0 || self.sim_burn_in >= self.sim_steps {
            return Err(Error::config("calibration counts must be positive and sim_burn_in < sim_steps"));
        }
        if self.sim_steps - self.sim_burn_in < super::moments::MIN_OBS / self.sim_reps.max(1) {
            return Err(Error::config("calibration simulations are too short for the moment estimator"));
        }
        let needs_se = self.weight_matrix == WeightMatrix::InvBootstrapVar || self.n_bootstrap > 0;
        if needs_se && self.targets.se.is_none() {
            return Err(Error::config(
                "target moments have no standard errors; supply them or use identity weights with n_bootstrap = 0",
            ));
        }
        Ok(())
    }

    /// Diagonal of the weighting matrix.
    pub fn omega(&self) -> [f64; 8] {
        match (self.weight_matrix, self.targets.se) {
            (WeightMatrix::InvBootstrapVar, Some(se)) => se.map(|s| 1.0 / (s * s)),
            _ => [1.0; 8],
        }
    }

    pub fn to_unit(&self, theta: &PricingParams) -> Vec<f64> {
        theta
            .to_array()
            .iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| if hi > lo { (v.ln() - lo.ln()) / (hi.ln() - lo.ln()) } else { 0.0 })
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> PricingParams {
        let mut a = [0.0; 8];
        for k in 0..8 {
            let (lo, hi) = self.bounds[k];
            a[k] = (lo.ln() + u[k].clamp(0.0, 1.0) * (hi.ln() - lo.ln())).exp().clamp(lo, hi);
        }
        PricingParams::from_array(a)
    }

    fn run_config(&self, theta: &PricingParams, seed: u64) -> RunConfig {
        RunConfig { seed, n_steps: self.sim_steps, burn_in: self.sim_burn_in, pricing: *theta, ..self.base.clone() }
    }
}

/// Runs `reps` market-only replications and keeps the ones that finish.
pub fn simulate_paths(cfg: &RunConfig, reps: usize) -> Vec<Trajectory> {
    (0..reps as u32)
        .filter_map(|rep| {
            let mut sim = Simulation::new(cfg, rep).ok()?;
            sim.set_record_level(RecordLevel::Market);
            sim.run_to_end().ok()?;
            Some(sim.into_trajectory())
        })
        .collect()
}

fn pooled_moments(paths: &[&Trajectory], burn_in: usize, periods_per_year: f64) -> Option<MomentEstimate> {
    let segs: Vec<Segment<'_>> = paths
        .iter()
        .map(|p| Segment { returns: &p.returns[burn_in..], flows: &p.flows[burn_in..], vols: &p.vols[burn_in..] })
        .collect();
    compute_moments_pooled(&segs, periods_per_year).ok()
}

/// Pooled simulated moments at `theta`; `None` if every replication aborts.
pub fn simulate_moments(theta: &PricingParams, cfg: &SmmConfig, seed: u64) -> Option<MomentEstimate> {
    if theta.validate().is_err() {
        return None;
    }
    let rc = cfg.run_config(theta, seed);
    let paths = simulate_paths(&rc, cfg.sim_reps);
    if paths.is_empty() {
        return None;
    }
    let refs: Vec<&Trajectory> = paths.iter().collect();
    pooled_moments(&refs, cfg.sim_burn_in, rc.periods_per_year)
}

/// `(m_sim - m_target)' diag(omega) (m_sim - m_target)` over moments the
/// target defines. A target moment the simulation cannot produce makes the
/// candidate infeasible.
pub fn quadratic_distance(sim: &MomentEstimate, target: &[f64; 8], target_ok: &[bool; 8], omega: &[f64; 8]) -> f64 {
    let s = sim.values.to_array();
    let mut j = 0.0;
    for k in 0..8 {
        if !target_ok[k] {
            continue;
        }
        if !sim.reliable[k] {
            return f64::INFINITY;
        }
        let d = s[k] - target[k];
        j += omega[k] * d * d;
    }
    j
}

pub fn smm_objective(theta: &PricingParams, cfg: &SmmConfig, seed: u64) -> f64 {
    match simulate_moments(theta, cfg, seed) {
        Some(m) => quadratic_distance(&m, &cfg.targets.moments.to_array(), &cfg.targets.reliable, &cfg.omega()),
        None => f64::INFINITY,
    }
}

/// Targets simulated from `theta_star`, with standard errors from a
/// replication-level bootstrap of the pooled moments.
pub fn synthetic_targets(
    base: &RunConfig,
    theta_star: &PricingParams,
    reps: usize,
    steps: usize,
    burn_in: usize,
    seed: u64,
    n_resamples: usize,
) -> Result<Targets> {
    let rc = RunConfig { seed, n_steps: steps, burn_in, pricing: *theta_star, ..base.clone() };
    rc.validate()?;
    let paths = simulate_paths(&rc, reps);
    if paths.len() < 2 {
        return Err(Error::Calibration("too few target replications finished".into()));
    }
    let refs: Vec<&Trajectory> = paths.iter().collect();
    let est = pooled_moments(&refs, burn_in, rc.periods_per_year)
        .ok_or_else(|| Error::Calibration("target moments could not be computed".into()))?;
    let draws: Vec<[f64; 8]> = (0..n_resamples)
        .into_par_iter()
        .filter_map(|b| {
            let mut r = rng::stream(seed, b as u32, StreamKind::Aux, 0);
            let pick: Vec<&Trajectory> =
                (0..paths.len()).map(|_| &paths[rand::Rng::random_range(&mut r, 0..paths.len())]).collect();
            pooled_moments(&pick, burn_in, rc.periods_per_year).map(|m| m.values.to_array())
        })
        .collect();
    let mut se = [f64::NAN; 8];
    for (k, s) in se.iter_mut().enumerate() {
        let col: Vec<f64> = draws.iter().map(|d| d[k]).filter(|x| x.is_finite()).collect();
        *s = stats::sd(&col);
    }
    let se = if se.iter().all(|x| x.is_finite() && *x > 0.0) { Some(se) } else { None };
    Ok(Targets { moments: est.values, se, reliable: est.reliable, source: TargetSource::Synthetic })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sobol,
    Local,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub stage: Stage,
    pub theta: [f64; 8],
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub theta_hat: PricingParams,
    pub objective: f64,
    pub stage1_best: f64,
    /// Per-parameter `(low, high)` bootstrap interval.
    pub ci: [(f64, f64); 8],
    pub bootstrap: Vec<[f64; 8]>,
    pub trace: Vec<TraceEntry>,
    pub moments_at_hat: Option<MomentVector>,
}

impl CalibrationResult {
    pub fn estimates_table(&self, truth: Option<&PricingParams>) -> Table {
        let mut t = Table::new(&["parameter", "estimate", "ci_low", "ci_high", "truth"]);
        let est = self.theta_hat.to_array();
        let tr = truth.map(|p| p.to_array());
        for k in 0..8 {
            t.rows.push(vec![
                PricingParams::NAMES[k].to_string(),
                fmt_f64(est[k]),
                fmt_f64(self.ci[k].0),
                fmt_f64(self.ci[k].1),
                fmt_f64(tr.map_or(f64::NAN, |a| a[k])),
            ]);
        }
        t
    }

    pub fn trace_table(&self) -> Table {
        let mut header = vec!["stage"];
        header.extend(PricingParams::NAMES);
        header.push("objective");
        let mut t = Table::new(&header);
        for e in &self.trace {
            let mut row = vec![match e.stage {
                Stage::Sobol => "sobol".to_string(),
                Stage::Local => "local".to_string(),
            }];
            row.extend(e.theta.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(e.objective));
            t.rows.push(row);
        }
        t
    }
}

/// Two-stage search plus bootstrap intervals.
pub fn calibrate(cfg: &SmmConfig, seed: u64) -> Result<CalibrationResult> {
    cfg.validate()?;
    let targets = cfg.targets.moments.to_array();
    let omega = cfg.omega();

    // Stage 1: Sobol design, skipping the origin so no point sits on a corner.
    let mut sobol = Sobol::new(8);
    sobol.next_point();
    let points = sobol.take_points(cfg.n_sobol);
    let stage1: Vec<f64> = points
        .par_iter()
        .map(|u| match simulate_moments(&cfg.from_unit(u), cfg, seed) {
            Some(m) => quadratic_distance(&m, &targets, &cfg.targets.reliable, &omega),
            None => f64::INFINITY,
        })
        .collect();
    let mut trace: Vec<TraceEntry> = points
        .iter()
        .zip(&stage1)
        .map(|(u, j)| TraceEntry { stage: Stage::Sobol, theta: cfg.from_unit(u).to_array(), objective: *j })
        .collect();
    let mut order: Vec<usize> = (0..points.len()).filter(|&i| stage1[i].is_finite()).collect();
    if order.is_empty() {
        let dump: Vec<String> = trace.iter().take(5).map(|e| format!("{:?}", e.theta)).collect();
        return Err(Error::Calibration(format!(
            "no Sobol candidate produced a finite objective; first candidates: {}",
            dump.join("; ")
        )));
    }
    order.sort_by(|&a, &b| stage1[a].total_cmp(&stage1[b]).then(a.cmp(&b)));
    let stage1_best = stage1[order[0]];

    // Stage 2: Nelder-Mead from the best design points.
    let opts = NmOptions { max_evals: cfg.local_max_evals, ..NmOptions::default() };
    let starts: Vec<&Vec<f64>> = order.iter().take(cfg.n_local_starts).map(|&i| &points[i]).collect();
    let local: Vec<nelder_mead::NmResult> = starts
        .par_iter()
        .map(|u0| {
            nelder_mead::minimize(
                |u| match simulate_moments(&cfg.from_unit(u), cfg, seed) {
                    Some(m) => quadratic_distance(&m, &targets, &cfg.targets.reliable, &omega),
                    None => f64::INFINITY,
                },
                u0,
                &opts,
            )
        })
        .collect();
    let mut best_u = points[order[0]].clone();
    let mut best_j = stage1_best;
    for r in &local {
        for (u, j) in &r.trace {
            trace.push(TraceEntry { stage: Stage::Local, theta: cfg.from_unit(u).to_array(), objective: *j });
        }
        if r.f < best_j {
            best_j = r.f;
            best_u = r.x.clone();
        }
    }
    let theta_hat = cfg.from_unit(&best_u);

    // Bootstrap: perturb targets by their standard errors and re-refine.
    let mut boot = Vec::new();
    if cfg.n_bootstrap > 0 {
        let se = cfg.targets.se.ok_or_else(|| Error::config("bootstrap needs target standard errors"))?;
        let bopts = NmOptions { max_evals: cfg.bootstrap_max_evals, ..NmOptions::default() };
        boot = (0..cfg.n_bootstrap)
            .into_par_iter()
            .map(|b| {
                let mut r = rng::stream(seed, b as u32, StreamKind::Aux, 1);
                let mut pert = targets;
                for k in 0..8 {
                    let z: f64 = StandardNormal.sample(&mut r);
                    pert[k] += se[k] * z;
                }
                let res = nelder_mead::minimize(
                    |u| match simulate_moments(&cfg.from_unit(u), cfg, seed) {
                        Some(m) => quadratic_distance(&m, &pert, &cfg.targets.reliable, &omega),
                        None => f64::INFINITY,
                    },
                    &best_u,
                    &bopts,
                );
                cfg.from_unit(&res.x).to_array()
            })
            .collect();
    }
    let est = theta_hat.to_array();
    let mut ci = [(0.0, 0.0); 8];
    for k in 0..8 {
        if boot.is_empty() {
            ci[k] = (est[k], est[k]);
        } else {
            let col: Vec<f64> = boot.iter().map(|b| b[k]).collect();
            let lo = stats::quantile(&col, 0.025).min(est[k]);
            let hi = stats::quantile(&col, 0.975).max(est[k]);
            ci[k] = (lo, hi);
        }
    }
    let moments_at_hat = simulate_moments(&theta_hat, cfg, seed).map(|m| m.values);
    Ok(CalibrationResult { theta_hat, objective: best_j, stage1_best, ci, bootstrap: boot, trace, moments_at_hat })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(targets: Targets) -> SmmConfig {
        let base = RunConfig { n_agents: 5, ..RunConfig::default() };
        let cal = CalibrationSettings {
            n_sobol: 6,
            n_local_starts: 1,
            sim_steps: 1200,
            sim_burn_in: 200,
            sim_reps: 4,
            n_bootstrap: 2,
            local_max_evals: 6,
            bootstrap_max_evals: 4,
            ..CalibrationSettings::default()
        };
        SmmConfig::new(&base, &cal, targets).unwrap()
    }

    fn fake_targets() -> Targets {
        Targets {
            moments: MomentVector::from_array([15.0, 0.01, 0.01, 0.01, -0.1, -0.1, -0.1, 0.2]),
            se: Some([1.0; 8]),
            reliable: [true; 8],
            source: TargetSource::File,
        }
    }

    #[test]
    fn quadratic_distance_properties() {
        let m = MomentEstimate { values: MomentVector::from_array([1.0; 8]), reliable: [true; 8] };
        let ok = [true; 8];
        assert_eq!(quadratic_distance(&m, &[1.0; 8], &ok, &[1.0; 8]), 0.0);
        let mut t = [1.0; 8];
        t[2] = 0.5;
        let j1 = quadratic_distance(&m, &t, &ok, &[1.0; 8]);
        t[2] = 0.0;
        let j2 = quadratic_distance(&m, &t, &ok, &[1.0; 8]);
        assert!((j2 - 4.0 * j1).abs() < 1e-15);
        let mut bad = m;
        bad.reliable[3] = false;
        assert_eq!(quadratic_distance(&bad, &[1.0; 8], &ok, &[1.0; 8]), f64::INFINITY);
        let mut skip = ok;
        skip[3] = false;
        assert_eq!(quadratic_distance(&bad, &[1.0; 8], &skip, &[1.0; 8]), 0.0);
    }

    #[test]
    fn identity_and_unit_variance_weights_agree() {
        let mut c = tiny(fake_targets());
        let theta = PricingParams::default();
        c.weight_matrix = WeightMatrix::Identity;
        let a = smm_objective(&theta, &c, 3);
        c.weight_matrix = WeightMatrix::InvBootstrapVar;
        let b = smm_objective(&theta, &c, 3);
        assert_eq!(a, b);
        assert!(a >= 0.0 && a.is_finite());
    }

    #[test]
    fn unit_map_round_trip() {
        let c = tiny(fake_targets());
        let theta = PricingParams::default();
        let back = c.from_unit(&c.to_unit(&theta));
        for (a, b) in back.to_array().iter().zip(theta.to_array()) {
            assert!((a / b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn collapsed_bounds_return_the_point() {
        let mut c = tiny(fake_targets());
        let p = PricingParams::default();
        for (b, v) in c.bounds.iter_mut().zip(p.to_array()) {
            *b = (v, v);
        }
        c.n_bootstrap = 0;
        let r = calibrate(&c, 5).unwrap();
        assert_eq!(r.theta_hat, p);
        assert!((r.objective - smm_objective(&p, &c, 5)).abs() < 1e-12);
    }

    #[test]
    fn calibration_is_deterministic_and_never_regresses() {
        let c = tiny(fake_targets());
        let a = calibrate(&c, 9).unwrap();
        let b = calibrate(&c, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.objective <= a.stage1_best);
        for k in 0..8 {
            let v = a.theta_hat.to_array()[k];
            assert!(a.ci[k].0 <= v && v <= a.ci[k].1);
            assert!(c.bounds[k].0 <= v && v <= c.bounds[k].1);
        }
    }

    #[test]
    fn targets_file_round_trip_and_errors() {
        let dir = std::env::temp_dir().join(format!("repmarket-targets-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("t.tsv");
        let t = fake_targets();
        t.write(&p).unwrap();
        let back = Targets::read(&p).unwrap();
        assert_eq!(back.moments, t.moments);
        assert_eq!(back.se, t.se);
        std::fs::write(&p, "moment\tvalue\nann_vol\t1\n").unwrap();
        assert!(Targets::read(&p).is_err());
        assert!(matches!(Targets::read(&dir.join("absent.tsv")), Err(Error::MissingArtifact(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_standard_errors_rejected_when_needed() {
        let mut t = fake_targets();
        t.se = None;
        let base = RunConfig::default();
        assert!(SmmConfig::new(&base, &CalibrationSettings::default(), t.clone()).is_err());
        let cal = CalibrationSettings { weight_matrix: WeightMatrix::Identity, n_bootstrap: 0, ..Default::default() };
        assert!(SmmConfig::new(&base, &cal, t).is_ok());
    }
}

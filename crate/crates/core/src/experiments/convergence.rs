//! Representation convergence under OU drift toward a shared benchmark.
//!
//! Each replication runs its burn-in without drift, freezes the reference
//! measure from the burn-in states, then switches drift on and records the
//! population's homogeneity and market coordination every few steps.

use rayon::prelude::*;

use crate::agents::DriftSpec;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{concentration, population_distances, synchronization, ReferenceMeasure};
use crate::sim::Simulation;
use crate::stats;
use crate::table::{fmt_f64, Table};

/// One recorded time of one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub t: usize,
    pub d_repr: f64,
    pub rho_forecast: f64,
    pub rho_position: f64,
    pub concentration: f64,
    pub abs_inventory: f64,
    pub lambda: f64,
    pub psi: f64,
}

impl ConvergencePoint {
    pub const FIELDS: [&'static str; 7] =
        ["d_repr", "rho_forecast", "rho_position", "concentration", "abs_inventory", "lambda", "psi"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.d_repr,
            self.rho_forecast,
            self.rho_position,
            self.concentration,
            self.abs_inventory,
            self.lambda,
            self.psi,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceOptions {
    pub n_steps: usize,
    pub window: usize,
    pub record_every: usize,
    pub d_crit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPath {
    pub drift: DriftSpec,
    /// `[rep][record]`; an aborted replication has an empty path.
    pub paths: Vec<Vec<ConvergencePoint>>,
    /// First recorded time below `d_crit`, per replication.
    pub crossings: Vec<Option<usize>>,
}

impl ScenarioPath {
    /// Recorded times shared by all finished replications.
    pub fn times(&self) -> Vec<usize> {
        self.paths.iter().find(|p| !p.is_empty()).map(|p| p.iter().map(|x| x.t).collect()).unwrap_or_default()
    }

    /// Cross-replication mean of `field` at each record.
    pub fn mean_path(&self, field: usize) -> Vec<f64> {
        let n = self.times().len();
        (0..n)
            .map(|k| {
                let v: Vec<f64> = self.paths.iter().filter(|p| p.len() == n).map(|p| p[k].values()[field]).filter(|x| x.is_finite()).collect();
                stats::mean(&v)
            })
            .collect()
    }

    /// Mean of `field` over the last `frac` of records.
    pub fn late_mean(&self, field: usize, frac: f64) -> f64 {
        let m = self.mean_path(field);
        let k = ((m.len() as f64 * frac).ceil() as usize).clamp(1, m.len().max(1));
        stats::mean(&m[m.len().saturating_sub(k)..])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceResult {
    pub scenarios: Vec<ScenarioPath>,
}

/// Every scenario starts from replication `m`'s initial population and shock
/// stream; only the drift differs.
pub fn run_convergence(base: &RunConfig, scenarios: &[DriftSpec], reps: usize, opts: &ConvergenceOptions) -> Result<ConvergenceResult> {
    if opts.n_steps <= base.burn_in || opts.record_every == 0 || opts.window < 3 {
        return Err(Error::config("convergence needs n_steps > burn_in, record_every > 0 and window >= 3"));
    }
    for d in scenarios {
        d.validate()?;
    }
    let mut cfg = base.clone();
    cfg.n_steps = opts.n_steps;
    cfg.drift = DriftSpec::default();
    cfg.validate()?;
    let jobs: Vec<(usize, u32)> = (0..scenarios.len()).flat_map(|s| (0..reps as u32).map(move |m| (s, m))).collect();
    let paths: Vec<Vec<ConvergencePoint>> =
        jobs.par_iter().map(|&(s, m)| run_path(&cfg, scenarios[s], m, opts)).collect::<Result<_>>()?;
    let scenarios = scenarios
        .iter()
        .zip(paths.chunks(reps.max(1)))
        .map(|(d, p)| {
            let crossings = p
                .iter()
                .map(|path| opts.d_crit.and_then(|c| path.iter().find(|x| x.d_repr < c).map(|x| x.t)))
                .collect();
            ScenarioPath { drift: *d, paths: p.to_vec(), crossings }
        })
        .collect();
    Ok(ConvergenceResult { scenarios })
}

fn run_path(cfg: &RunConfig, drift: DriftSpec, rep: u32, opts: &ConvergenceOptions) -> Result<Vec<ConvergencePoint>> {
    let mut sim = Simulation::new(cfg, rep)?;
    let mut out = Vec::new();
    let burn = cfg.burn_in;
    let abort = |e: Error| match e {
        Error::Numeric { .. } => Ok(Vec::new()),
        other => Err(other),
    };
    if let Err(e) = sim.run(burn) {
        return abort(e);
    }
    let mu = ReferenceMeasure::empirical(sim.trajectory(), 0, cfg.metrics.measure_states)?;
    sim.set_drift(drift, true)?;
    out.push(snapshot(&sim, &mu, opts.window)?);
    while sim.t() < opts.n_steps {
        let n = opts.record_every.min(opts.n_steps - sim.t());
        if let Err(e) = sim.run(n) {
            return abort(e);
        }
        out.push(snapshot(&sim, &mu, opts.window)?);
    }
    Ok(out)
}

fn snapshot(sim: &Simulation, mu: &ReferenceMeasure, window: usize) -> Result<ConvergencePoint> {
    let t = sim.t();
    let traj = sim.trajectory();
    let from = t.saturating_sub(window);
    let (d_repr, _) = population_distances(sim.agents(), mu, sim.config().activation)?;
    let win = |v: &Vec<f64>| v[from..t].to_vec();
    let fc: Vec<Vec<f64>> = traj.forecasts.iter().map(win).collect();
    let pos: Vec<Vec<f64>> = traj.positions.iter().map(win).collect();
    let tr: Vec<Vec<f64>> = traj.trades.iter().map(win).collect();
    let (rf, rp) = if fc.len() >= 2 && t - from >= 3 {
        let s = synchronization(&fc, &pos, 0)?;
        (s.rho_forecast, s.rho_position)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(ConvergencePoint {
        t,
        d_repr,
        rho_forecast: rf,
        rho_position: rp,
        concentration: concentration(&tr, 0).mean,
        abs_inventory: traj.inventories[t - 1].abs(),
        lambda: traj.lambdas[t - 1],
        psi: traj.psis[t - 1],
    })
}

impl ConvergenceResult {
    /// Cross-replication mean panel, one row per scenario and record time.
    pub fn panel_table(&self) -> Table {
        let mut header = vec!["scenario", "nu_w", "sigma_w", "sigma_base", "t"];
        header.extend(ConvergencePoint::FIELDS);
        let mut t = Table::new(&header);
        for (s, sc) in self.scenarios.iter().enumerate() {
            let means: Vec<Vec<f64>> = (0..7).map(|k| sc.mean_path(k)).collect();
            for (k, time) in sc.times().iter().enumerate() {
                let mut row = vec![
                    s.to_string(),
                    fmt_f64(sc.drift.nu_w),
                    fmt_f64(sc.drift.sigma_w),
                    fmt_f64(sc.drift.sigma_base),
                    time.to_string(),
                ];
                row.extend(means.iter().map(|m| fmt_f64(m[k])));
                t.rows.push(row);
            }
        }
        t
    }

    pub fn crossings_table(&self) -> Table {
        let mut t = Table::new(&["scenario", "rep", "crossing_t"]);
        for (s, sc) in self.scenarios.iter().enumerate() {
            for (m, c) in sc.crossings.iter().enumerate() {
                t.rows.push(vec![s.to_string(), m.to_string(), c.map_or("NA".into(), |v| v.to_string())]);
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(n_steps: usize) -> ConvergenceOptions {
        ConvergenceOptions { n_steps, window: 100, record_every: 50, d_crit: Some(0.05) }
    }

    #[test]
    fn deterministic_contraction_is_geometric() {
        // Oracle: with no noise every pairwise W difference shrinks by
        // (1 - nu) per step, so the ratio of successive records is fixed
        // under a linear activation.
        let mut base = RunConfig { n_agents: 4, burn_in: 200, ..RunConfig::default() };
        base.activation = crate::agents::Activation::Linear;
        let drift = DriftSpec { nu_w: 0.1, ..DriftSpec::default() };
        let r = run_convergence(&base, &[drift], 1, &opts(500)).unwrap();
        let d = r.scenarios[0].mean_path(0);
        let expect = 0.9f64.powi(50);
        assert!((d[1] / d[0] - expect).abs() < 1e-6 * expect.max(1e-300) + 1e-12);
        assert!(d[d.len() - 1] < 1e-10 * d[0]);
        assert!(r.scenarios[0].crossings[0].is_some());
    }

    #[test]
    fn no_drift_keeps_distance_fixed() {
        let base = RunConfig { n_agents: 4, burn_in: 200, ..RunConfig::default() };
        let r = run_convergence(&base, &[DriftSpec::default()], 2, &opts(400)).unwrap();
        let d = r.scenarios[0].mean_path(0);
        assert!(d.iter().all(|x| (x - d[0]).abs() < 1e-12));
        assert_eq!(r.scenarios[0].times().last(), Some(&400));
    }

    #[test]
    fn relative_coordinates_collapse_while_benchmark_wanders() {
        let base = RunConfig { n_agents: 4, burn_in: 200, ..RunConfig::default() };
        let drift = DriftSpec { nu_w: 0.1, sigma_w: 0.0, sigma_base: 0.05, dt: 1.0 };
        let r = run_convergence(&base, &[drift], 1, &opts(600)).unwrap();
        let d = r.scenarios[0].mean_path(0);
        assert!(d[d.len() - 1] < 1e-6 * d[0]);
    }
}

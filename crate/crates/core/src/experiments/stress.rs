//! Robustness of the two extreme factorial cells to heavy-tailed shocks,
//! asynchronous updating and a moving benchmark representation.

use serde::{Deserialize, Serialize};

use super::factorial::{cell_config, FactorialCell};
use super::replication::{check_abort_ceiling, run_replications};
use crate::agents::{AsyncSpec, DriftSpec};
use crate::config::{ExperimentSettings, RunConfig, ShockSettings};
use crate::error::{Error, Result};
use crate::metrics::OutcomeRecord;
use crate::stats;
use crate::table::{fmt_f64, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressScenario {
    Baseline,
    StableShocks,
    Async,
    StaticBase,
    MovingBase,
}

impl StressScenario {
    pub const ALL: [StressScenario; 5] = [
        StressScenario::Baseline,
        StressScenario::StableShocks,
        StressScenario::Async,
        StressScenario::StaticBase,
        StressScenario::MovingBase,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StressScenario::Baseline => "baseline",
            StressScenario::StableShocks => "stable_shocks",
            StressScenario::Async => "async",
            StressScenario::StaticBase => "static_base",
            StressScenario::MovingBase => "moving_base",
        }
    }

    /// Scenario the deltas are measured against.
    pub fn reference(&self) -> Option<StressScenario> {
        match self {
            StressScenario::StableShocks | StressScenario::Async => Some(StressScenario::Baseline),
            StressScenario::MovingBase => Some(StressScenario::StaticBase),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressSpecs {
    pub shock: ShockSettings,
    pub async_clock: AsyncSpec,
    /// Drift of the moving-benchmark scenario; its static reference uses the
    /// same spec with `sigma_base = 0`.
    pub drift: DriftSpec,
}

impl StressSpecs {
    pub fn from_settings(base: &RunConfig, exp: &ExperimentSettings) -> Self {
        let mut shock = base.shock;
        shock.kind = crate::engine::ShockKind::StableJump;
        StressSpecs {
            shock,
            async_clock: AsyncSpec { enabled: true, rate_mu: exp.stress_rate_mu, rate_sigma: exp.stress_rate_sigma },
            drift: DriftSpec { nu_w: exp.stress_nu_w, sigma_w: exp.stress_sigma_w, sigma_base: exp.stress_sigma_base, dt: 1.0 },
        }
    }

    fn config(&self, cell_cfg: &RunConfig, s: StressScenario) -> RunConfig {
        let mut c = cell_cfg.clone();
        match s {
            StressScenario::Baseline => {}
            StressScenario::StableShocks => c.shock = self.shock,
            StressScenario::Async => c.async_clock = self.async_clock,
            StressScenario::StaticBase => c.drift = DriftSpec { sigma_base: 0.0, ..self.drift },
            StressScenario::MovingBase => c.drift = self.drift,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressRun {
    pub cell: FactorialCell,
    pub scenario: StressScenario,
    pub records: Vec<OutcomeRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressResult {
    pub runs: Vec<StressRun>,
}

pub const EXTREME_CELLS: [FactorialCell; 2] = [FactorialCell::new(0, 0, 0), FactorialCell::new(1, 1, 1)];

pub fn run_stress_suite(base: &RunConfig, exp: &ExperimentSettings, specs: &StressSpecs, reps: usize) -> Result<StressResult> {
    if !(specs.drift.sigma_base > 0.0) {
        return Err(Error::config("the moving-benchmark scenario needs sigma_base > 0"));
    }
    let mut runs = Vec::new();
    for cell in EXTREME_CELLS {
        let cc = cell_config(base, exp, cell);
        for s in StressScenario::ALL {
            let cfg = specs.config(&cc, s);
            cfg.validate()?;
            let records = run_replications(&cfg, reps)?;
            check_abort_ceiling(&records, exp.abort_ceiling)?;
            runs.push(StressRun { cell, scenario: s, records });
        }
    }
    Ok(StressResult { runs })
}

impl StressResult {
    fn find(&self, cell: FactorialCell, s: StressScenario) -> Option<&StressRun> {
        self.runs.iter().find(|r| r.cell == cell && r.scenario == s)
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&super::replication::summary_header(&["cell", "scenario"]));
        for r in &self.runs {
            t.rows.push(super::replication::summary_row(vec![r.cell.label(), r.scenario.name().into()], &r.records));
        }
        t
    }

    /// Paired scenario-minus-reference deltas per cell and field.
    pub fn deltas_table(&self) -> Table {
        let mut t = Table::new(&["cell", "scenario", "reference", "field", "delta", "se"]);
        for r in &self.runs {
            let Some(refs) = r.scenario.reference() else { continue };
            let Some(base) = self.find(r.cell, refs) else { continue };
            for (k, f) in OutcomeRecord::FIELDS.iter().enumerate() {
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for (x, y) in r.records.iter().zip(&base.records) {
                    let (u, v) = (x.values()[k], y.values()[k]);
                    if !x.aborted && !y.aborted && u.is_finite() && v.is_finite() {
                        a.push(u);
                        b.push(v);
                    }
                }
                let (d, se) = stats::paired_diff(&a, &b);
                t.rows.push(vec![
                    r.cell.label(),
                    r.scenario.name().into(),
                    refs.name().into(),
                    f.to_string(),
                    fmt_f64(d),
                    fmt_f64(se),
                ]);
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_async_matches_baseline() {
        let base = RunConfig { n_agents: 4, n_steps: 600, burn_in: 200, ..RunConfig::default() };
        let exp = ExperimentSettings::default();
        let mut specs = StressSpecs::from_settings(&base, &exp);
        specs.async_clock.rate_mu = f64::INFINITY;
        let cc = cell_config(&base, &exp, EXTREME_CELLS[0]);
        let a = run_replications(&specs.config(&cc, StressScenario::Async), 2).unwrap();
        let b = run_replications(&specs.config(&cc, StressScenario::Baseline), 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_benchmark_volatility_reduces_to_static() {
        let base = RunConfig { n_agents: 4, n_steps: 600, burn_in: 200, ..RunConfig::default() };
        let exp = ExperimentSettings::default();
        let mut specs = StressSpecs::from_settings(&base, &exp);
        specs.drift.sigma_base = 0.0;
        let cc = cell_config(&base, &exp, EXTREME_CELLS[1]);
        let a = run_replications(&specs.config(&cc, StressScenario::MovingBase), 2).unwrap();
        let b = run_replications(&specs.config(&cc, StressScenario::StaticBase), 2).unwrap();
        assert_eq!(a, b);
        assert!(run_stress_suite(&base, &exp, &specs, 1).is_err());
    }

    #[test]
    fn suite_shape() {
        let base = RunConfig { n_agents: 3, n_steps: 400, burn_in: 200, ..RunConfig::default() };
        let exp = ExperimentSettings::default();
        let specs = StressSpecs::from_settings(&base, &exp);
        let r = run_stress_suite(&base, &exp, &specs, 2).unwrap();
        assert_eq!(r.runs.len(), 10);
        assert_eq!(r.deltas_table().len(), 2 * 3 * OutcomeRecord::FIELDS.len());
    }
}

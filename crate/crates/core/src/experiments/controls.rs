//! Negative controls, each paired replication-by-replication with its
//! treatment.

use serde::{Deserialize, Serialize};

use super::factorial::{cell_config, FactorialCell};
use super::replication::{check_abort_ceiling, run_replications};
use crate::agents::Activation;
use crate::config::{ExperimentSettings, RunConfig};
use crate::error::Result;
use crate::metrics::OutcomeRecord;
use crate::stats;
use crate::table::{fmt_f64, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    /// Liquidity coefficients frozen at their base levels.
    ConstantLiquidity,
    /// Shared public signal with maximally dispersed representations.
    SharedSignal,
    /// Identity activation.
    Linear,
}

impl ControlKind {
    pub const ALL: [ControlKind; 3] = [ControlKind::ConstantLiquidity, ControlKind::SharedSignal, ControlKind::Linear];

    pub fn name(&self) -> &'static str {
        match self {
            ControlKind::ConstantLiquidity => "constant_liquidity",
            ControlKind::SharedSignal => "shared_signal",
            ControlKind::Linear => "linear",
        }
    }

    /// `(control, treatment)` configurations.
    pub fn configs(&self, base: &RunConfig, exp: &ExperimentSettings) -> (RunConfig, RunConfig) {
        let homogeneous = cell_config(base, exp, FactorialCell::new(1, 0, 0));
        match self {
            ControlKind::ConstantLiquidity => {
                let mut c = homogeneous.clone();
                c.constant_liquidity = true;
                (c, homogeneous)
            }
            ControlKind::SharedSignal => (cell_config(base, exp, FactorialCell::new(0, 0, 0)), homogeneous),
            ControlKind::Linear => {
                let mut c = base.clone();
                c.activation = Activation::Linear;
                (c, base.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlComparison {
    pub kind: ControlKind,
    pub control: Vec<OutcomeRecord>,
    pub treatment: Vec<OutcomeRecord>,
}

impl ControlComparison {
    /// Paired `control - treatment` mean and standard error per field.
    pub fn paired(&self) -> Vec<(&'static str, f64, f64, f64, f64)> {
        OutcomeRecord::FIELDS
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for (c, t) in self.control.iter().zip(&self.treatment) {
                    let (x, y) = (c.values()[k], t.values()[k]);
                    if !c.aborted && !t.aborted && x.is_finite() && y.is_finite() {
                        a.push(x);
                        b.push(y);
                    }
                }
                let (d, se) = stats::paired_diff(&a, &b);
                (*f, stats::mean(&a), stats::mean(&b), d, se)
            })
            .collect()
    }
}

pub fn run_negative_controls(base: &RunConfig, exp: &ExperimentSettings, reps: usize) -> Result<Vec<ControlComparison>> {
    ControlKind::ALL
        .iter()
        .map(|k| {
            let (c, t) = k.configs(base, exp);
            let control = run_replications(&c, reps)?;
            let treatment = run_replications(&t, reps)?;
            check_abort_ceiling(control.iter().chain(&treatment), exp.abort_ceiling)?;
            Ok(ControlComparison { kind: *k, control, treatment })
        })
        .collect()
}

pub fn controls_table(results: &[ControlComparison]) -> Table {
    let mut t = Table::new(&["control", "field", "control_mean", "treatment_mean", "diff", "se"]);
    for r in results {
        for (f, a, b, d, se) in r.paired() {
            t.rows.push(vec![r.kind.name().into(), f.into(), fmt_f64(a), fmt_f64(b), fmt_f64(d), fmt_f64(se)]);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{encode, forecast};
    use crate::sim::{replication_population, Simulation};

    fn small() -> RunConfig {
        RunConfig { n_agents: 5, n_steps: 700, burn_in: 200, ..RunConfig::default() }
    }

    #[test]
    fn constant_liquidity_series_is_flat() {
        let (c, _) = ControlKind::ConstantLiquidity.configs(&small(), &ExperimentSettings::default());
        let mut sim = Simulation::new(&c, 0).unwrap();
        sim.run_to_end().unwrap();
        let tr = sim.trajectory();
        assert!(tr.lambdas.iter().all(|l| *l == c.pricing.lambda0));
        assert!(tr.psis.iter().all(|p| *p == c.pricing.psi0));
    }

    #[test]
    fn dispersed_control_has_larger_distance() {
        let r = run_negative_controls(&small(), &ExperimentSettings::default(), 2).unwrap();
        let ss = &r[1];
        assert_eq!(ss.kind, ControlKind::SharedSignal);
        for (c, t) in ss.control.iter().zip(&ss.treatment) {
            assert!(c.d_repr_mean > t.d_repr_mean);
        }
        assert_eq!(controls_table(&r).len(), 3 * OutcomeRecord::FIELDS.len());
    }

    #[test]
    fn linear_identical_representations_differ_only_through_readouts() {
        // Oracle: f_i = theta_i' (W s) with a common W.
        let mut cfg = small();
        cfg.activation = Activation::Linear;
        cfg.population.w_sigma = 0.0;
        let (agents, center) = replication_population(&cfg, 0).unwrap();
        let s = [0.01, -0.02, 0.005, 0.0, 0.03, 0.1, -0.4];
        let h: Vec<f64> = (0..center.nrows()).map(|r| (0..s.len()).map(|c| center[(r, c)] * s[c]).sum()).collect();
        for a in &agents {
            let x = encode(&a.state, &s, Activation::Linear).unwrap();
            let f = forecast(&a.state.theta, x.as_slice());
            let oracle: f64 = a.state.theta.iter().zip(&h).map(|(t, v)| t * v).sum();
            assert!((f - oracle).abs() < 1e-12);
        }
    }
}

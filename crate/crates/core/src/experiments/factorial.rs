//! The 2x2x2 homogeneity factorial and its saturated regression.
//!
//! A factor at level 1 is the homogeneous setting: tight representation
//! spread, low risk-aversion spread, low learning-rate spread. Cell means of
//! gamma and eta are identical by construction; only dispersion changes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::replication::{check_abort_ceiling, run_replication};
use crate::config::{ExperimentSettings, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::OutcomeRecord;
use crate::sim::population_spec;
use crate::stats;
use crate::table::{fmt_f64, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactorialCell {
    pub h_w: u8,
    pub h_gamma: u8,
    pub h_eta: u8,
}

impl FactorialCell {
    pub const fn new(h_w: u8, h_gamma: u8, h_eta: u8) -> Self {
        FactorialCell { h_w, h_gamma, h_eta }
    }

    /// The eight cells in standard order (`h_w` slowest).
    pub fn all() -> [FactorialCell; 8] {
        std::array::from_fn(|i| FactorialCell::new((i >> 2) as u8 & 1, (i >> 1) as u8 & 1, i as u8 & 1))
    }

    pub fn index(&self) -> usize {
        ((self.h_w as usize) << 2) | ((self.h_gamma as usize) << 1) | self.h_eta as usize
    }

    pub fn label(&self) -> String {
        format!("{}{}{}", self.h_w, self.h_gamma, self.h_eta)
    }

    /// Regressor row `[1, W, g, e, Wg, We, ge, Wge]`.
    pub fn design_row(&self) -> [f64; 8] {
        let (w, g, e) = (self.h_w as f64, self.h_gamma as f64, self.h_eta as f64);
        [1.0, w, g, e, w * g, w * e, g * e, w * g * e]
    }
}

/// Run configuration for one cell.
pub fn cell_config(base: &RunConfig, exp: &ExperimentSettings, cell: FactorialCell) -> RunConfig {
    let mut cfg = base.clone();
    let p = &mut cfg.population;
    p.w_sigma = if cell.h_w == 1 { exp.w_sigma_tight } else { exp.w_sigma_wide };
    p.gamma_sigma = if cell.h_gamma == 1 { exp.gamma_sigma_low } else { exp.gamma_sigma_high };
    p.eta_sigma = if cell.h_eta == 1 { exp.eta_sigma_low } else { exp.eta_sigma_high };
    cfg
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub estimate: f64,
    pub se: f64,
}

/// Saturated-model coefficients for one outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorialEstimates {
    pub alpha: Effect,
    pub beta_w: Effect,
    pub beta_gamma: Effect,
    pub beta_eta: Effect,
    pub beta_wg: Effect,
    pub beta_we: Effect,
    pub beta_ge: Effect,
    pub beta_wge: Effect,
    /// Whether standard errors come from replication-paired contrasts.
    pub paired: bool,
}

impl FactorialEstimates {
    pub const NAMES: [&'static str; 8] =
        ["alpha", "beta_w", "beta_gamma", "beta_eta", "beta_wg", "beta_we", "beta_ge", "beta_wge"];

    pub fn effects(&self) -> [Effect; 8] {
        [
            self.alpha,
            self.beta_w,
            self.beta_gamma,
            self.beta_eta,
            self.beta_wg,
            self.beta_we,
            self.beta_ge,
            self.beta_wge,
        ]
    }

    fn from_effects(e: [Effect; 8], paired: bool) -> Self {
        FactorialEstimates {
            alpha: e[0],
            beta_w: e[1],
            beta_gamma: e[2],
            beta_eta: e[3],
            beta_wg: e[4],
            beta_we: e[5],
            beta_ge: e[6],
            beta_wge: e[7],
            paired,
        }
    }

    /// Fitted mean of `cell`.
    pub fn fitted(&self, cell: FactorialCell) -> f64 {
        cell.design_row().iter().zip(self.effects()).map(|(x, e)| x * e.estimate).sum()
    }
}

fn inverse_design() -> DMatrix<f64> {
    let x = DMatrix::from_fn(8, 8, |r, c| FactorialCell::all()[r].design_row()[c]);
    x.try_inverse().expect("saturated factorial design is invertible")
}

/// Least squares on the eight cell means.
///
/// `y[c][m]` is replication `m` of cell `c` in [`FactorialCell::all`] order;
/// NaN marks an aborted replication. The model is saturated, so the fit
/// reproduces the cell means exactly and count weights do not change it.
/// Standard errors use replication-paired contrasts when at least two
/// replications are complete in every cell, and independent cell variances
/// otherwise. Returns `None` if some cell has no data.
pub fn factorial_regression(y: &[Vec<f64>; 8]) -> Option<FactorialEstimates> {
    let cells: Vec<Vec<f64>> = y.iter().map(|c| c.iter().copied().filter(|v| v.is_finite()).collect()).collect();
    if cells.iter().any(|c| c.is_empty()) {
        return None;
    }
    let xinv = inverse_design();
    let means = DVector::from_iterator(8, cells.iter().map(|c| stats::mean(c)));
    let beta = &xinv * &means;

    let m = y.iter().map(Vec::len).min().unwrap_or(0);
    let complete: Vec<usize> = (0..m).filter(|&r| y.iter().all(|c| c[r].is_finite())).collect();
    let paired = complete.len() >= 2;
    let se: Vec<f64> = if paired {
        let per_rep: Vec<DVector<f64>> =
            complete.iter().map(|&r| &xinv * DVector::from_iterator(8, y.iter().map(|c| c[r]))).collect();
        (0..8).map(|k| stats::sem(&per_rep.iter().map(|b| b[k]).collect::<Vec<_>>())).collect()
    } else {
        let v: Vec<f64> = cells
            .iter()
            .map(|c| if c.len() > 1 { stats::variance(c) / c.len() as f64 } else { f64::NAN })
            .collect();
        (0..8).map(|k| (0..8).map(|c| xinv[(k, c)].powi(2) * v[c]).sum::<f64>().sqrt()).collect()
    };
    let effects = std::array::from_fn(|k| Effect { estimate: beta[k], se: se[k] });
    Some(FactorialEstimates::from_effects(effects, paired))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorialRun {
    /// `records[c][m]`: cell `c` in [`FactorialCell::all`] order, replication `m`.
    pub records: Vec<Vec<OutcomeRecord>>,
    /// One estimate set per outcome field; `None` when a cell fully aborted.
    pub estimates: Vec<(String, Option<FactorialEstimates>)>,
    pub incomplete: bool,
}

/// Runs all eight cells with `reps` paired replications each. Replication
/// `m` of every cell uses the same seed-derived streams.
pub fn run_factorial(base: &RunConfig, exp: &ExperimentSettings, reps: usize) -> Result<FactorialRun> {
    let cfgs: Vec<RunConfig> = FactorialCell::all().iter().map(|c| cell_config(base, exp, *c)).collect();
    check_mean_preservation(&cfgs)?;
    for c in &cfgs {
        c.validate()?;
    }
    let jobs: Vec<(usize, u32)> = (0..8).flat_map(|c| (0..reps as u32).map(move |m| (c, m))).collect();
    let flat: Vec<OutcomeRecord> =
        jobs.par_iter().map(|&(c, m)| run_replication(&cfgs[c], m, false).map(|o| o.record)).collect::<Result<_>>()?;
    let records: Vec<Vec<OutcomeRecord>> = flat.chunks(reps.max(1)).map(|c| c.to_vec()).collect();
    check_abort_ceiling(flat.iter(), exp.abort_ceiling)?;
    let incomplete = records.iter().any(|c| c.iter().all(|r| r.aborted));
    let estimates = OutcomeRecord::FIELDS
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let y: [Vec<f64>; 8] = std::array::from_fn(|c| {
                records[c].iter().map(|r| if r.aborted { f64::NAN } else { r.values()[k] }).collect()
            });
            (name.to_string(), factorial_regression(&y))
        })
        .collect();
    Ok(FactorialRun { records, estimates, incomplete })
}

fn check_mean_preservation(cfgs: &[RunConfig]) -> Result<()> {
    let specs: Vec<_> = cfgs.iter().map(|c| population_spec(c, DMatrix::zeros(1, 1))).collect();
    let (g0, e0) = (specs[0].gamma_mean(), specs[0].eta_mean());
    for s in &specs {
        let (g, e) = (s.gamma_mean(), s.eta_mean());
        if (g - g0).abs() > 1e-9 * g0 || (e - e0).abs() > 1e-9 * e0 {
            return Err(Error::Design("factorial cells must share gamma and eta means".into()));
        }
    }
    Ok(())
}

impl FactorialRun {
    pub fn records_table(&self) -> Table {
        let rows: Vec<(Vec<String>, OutcomeRecord)> = FactorialCell::all()
            .iter()
            .zip(&self.records)
            .flat_map(|(cell, recs)| {
                recs.iter().enumerate().map(move |(m, r)| {
                    (
                        vec![
                            cell.label(),
                            cell.h_w.to_string(),
                            cell.h_gamma.to_string(),
                            cell.h_eta.to_string(),
                            m.to_string(),
                        ],
                        *r,
                    )
                })
            })
            .collect();
        super::replication::records_table(&["cell", "h_w", "h_gamma", "h_eta", "rep"], &rows)
    }

    pub fn cells_table(&self) -> Table {
        let header = super::replication::summary_header(&["cell", "h_w", "h_gamma", "h_eta"]);
        let mut t = Table::new(&header);
        for (cell, recs) in FactorialCell::all().iter().zip(&self.records) {
            let keys = vec![cell.label(), cell.h_w.to_string(), cell.h_gamma.to_string(), cell.h_eta.to_string()];
            t.rows.push(super::replication::summary_row(keys, recs));
        }
        t
    }

    pub fn estimates_table(&self) -> Table {
        let mut t = Table::new(&["outcome", "term", "estimate", "se", "paired"]);
        for (name, est) in &self.estimates {
            for (k, term) in FactorialEstimates::NAMES.iter().enumerate() {
                let (e, paired) = match est {
                    Some(est) => (est.effects()[k], est.paired),
                    None => (Effect { estimate: f64::NAN, se: f64::NAN }, false),
                };
                t.rows.push(vec![
                    name.clone(),
                    term.to_string(),
                    fmt_f64(e.estimate),
                    fmt_f64(e.se),
                    (paired as u8).to_string(),
                ]);
            }
        }
        t
    }

    /// Paired difference `cell_a - cell_b` of one field over replications
    /// finished in both cells.
    pub fn paired_contrast(&self, a: FactorialCell, b: FactorialCell, field: &str) -> Option<PairedContrast> {
        let k = OutcomeRecord::FIELDS.iter().position(|f| *f == field)?;
        let (ra, rb) = (&self.records[a.index()], &self.records[b.index()]);
        let (mut xa, mut xb) = (Vec::new(), Vec::new());
        for (p, q) in ra.iter().zip(rb) {
            let (u, v) = (p.values()[k], q.values()[k]);
            if !p.aborted && !q.aborted && u.is_finite() && v.is_finite() {
                xa.push(u);
                xb.push(v);
            }
        }
        if xa.len() < 2 {
            return None;
        }
        let (diff, se) = stats::paired_diff(&xa, &xb);
        let unpaired_se = (stats::variance(&xa) / xa.len() as f64 + stats::variance(&xb) / xb.len() as f64).sqrt();
        Some(PairedContrast { mean_a: stats::mean(&xa), mean_b: stats::mean(&xb), diff, se, unpaired_se, n: xa.len() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedContrast {
    pub mean_a: f64,
    pub mean_b: f64,
    pub diff: f64,
    pub se: f64,
    pub unpaired_se: f64,
    pub n: usize,
}

impl PairedContrast {
    /// `diff` exceeds `k` paired standard errors in the positive direction.
    pub fn separated(&self, k: f64) -> bool {
        self.diff > k * self.se && self.diff > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn cells_are_distinct_and_indexed() {
        let all = FactorialCell::all();
        for (i, c) in all.iter().enumerate() {
            assert_eq!(c.index(), i);
        }
        let mut labels: Vec<String> = all.iter().map(|c| c.label()).collect();
        labels.dedup();
        assert_eq!(labels.len(), 8);
    }

    fn synthetic(f: impl Fn(FactorialCell) -> f64, noise: f64, m: usize) -> [Vec<f64>; 8] {
        let mut rng = seeded_rng(17, 0);
        let n = Normal::new(0.0, noise).unwrap();
        std::array::from_fn(|c| {
            let cell = FactorialCell::all()[c];
            (0..m).map(|_| f(cell) + n.sample(&mut rng)).collect()
        })
    }

    #[test]
    fn recovers_planted_effects() {
        // Oracle: the linear model that generated the data.
        let y = synthetic(|c| 1.0 + 2.0 * c.h_w as f64 + 0.5 * (c.h_w * c.h_gamma) as f64, 0.01, 50);
        let e = factorial_regression(&y).unwrap();
        assert!((e.alpha.estimate - 1.0).abs() < 0.05);
        assert!((e.beta_w.estimate - 2.0).abs() < 0.05);
        assert!((e.beta_wg.estimate - 0.5).abs() < 0.05);
        for x in [e.beta_gamma, e.beta_eta, e.beta_we, e.beta_ge, e.beta_wge] {
            assert!(x.estimate.abs() < 0.05);
        }
        assert!(e.paired);
    }

    #[test]
    fn saturated_fit_reproduces_cell_means() {
        let y = synthetic(|c| (c.index() as f64).sin() * 3.0, 0.5, 7);
        let e = factorial_regression(&y).unwrap();
        for (c, v) in FactorialCell::all().iter().zip(&y) {
            assert!((e.fitted(*c) - stats::mean(v)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_outcome_has_only_intercept() {
        let y: [Vec<f64>; 8] = std::array::from_fn(|_| vec![3.0; 5]);
        let e = factorial_regression(&y).unwrap();
        assert!((e.alpha.estimate - 3.0).abs() < 1e-12);
        for x in &e.effects()[1..] {
            assert!(x.estimate.abs() < 1e-12);
        }
    }

    #[test]
    fn aborted_cell_leaves_no_estimate() {
        let mut y: [Vec<f64>; 8] = std::array::from_fn(|_| vec![1.0, 2.0]);
        y[3] = vec![f64::NAN, f64::NAN];
        assert!(factorial_regression(&y).is_none());
        y[3] = vec![f64::NAN, 2.0];
        let e = factorial_regression(&y).unwrap();
        assert!(!e.paired);
    }

    #[test]
    fn cell_configs_preserve_means() {
        let base = RunConfig::default();
        let exp = ExperimentSettings::default();
        let cfgs: Vec<RunConfig> = FactorialCell::all().iter().map(|c| cell_config(&base, &exp, *c)).collect();
        check_mean_preservation(&cfgs).unwrap();
        assert_eq!(cfgs[0].population.w_sigma, exp.w_sigma_wide);
        assert_eq!(cfgs[7].population.eta_sigma, exp.eta_sigma_low);
    }

    #[test]
    fn bookkeeping_and_pairing() {
        let base = RunConfig { n_agents: 4, n_steps: 600, burn_in: 200, ..RunConfig::default() };
        let exp = ExperimentSettings::default();
        let run = run_factorial(&base, &exp, 3).unwrap();
        assert_eq!(run.records.iter().map(Vec::len).sum::<usize>(), 24);
        assert_eq!(run.records_table().len(), 24);
        assert_eq!(run.estimates.len(), OutcomeRecord::FIELDS.len());
        assert!(!run.incomplete);
    }
}

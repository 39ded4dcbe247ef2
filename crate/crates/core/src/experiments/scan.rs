//! Single-factor scan over the representation spread.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::factorial::{cell_config, FactorialCell};
use super::replication::{check_abort_ceiling, field_values, run_replication, summary_header, summary_row};
use crate::config::{ExperimentSettings, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::OutcomeRecord;
use crate::table::{fmt_f64, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Wide risk-aversion and learning-rate spreads.
    Heterogeneous,
    /// Narrow risk-aversion and learning-rate spreads.
    Uniform,
}

/// `n` log-spaced spreads from `wide` down to `tight`.
pub fn scan_grid(n: usize, wide: f64, tight: f64) -> Vec<f64> {
    if n == 1 {
        return vec![wide];
    }
    let (a, b) = (wide.ln(), tight.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub w_sigma: f64,
    pub records: Vec<OutcomeRecord>,
}

impl ScanPoint {
    pub fn values(&self, field: &str) -> Result<Vec<f64>> {
        let k = OutcomeRecord::FIELDS
            .iter()
            .position(|f| *f == field)
            .ok_or_else(|| Error::data(format!("unknown outcome '{field}'")))?;
        Ok(field_values(&self.records, k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub mode: ControlMode,
    pub points: Vec<ScanPoint>,
}

/// Replications at each grid point share seeds, so point-to-point changes
/// reflect the spread rather than new shock paths.
pub fn run_scan(
    base: &RunConfig,
    exp: &ExperimentSettings,
    n_points: usize,
    wide: f64,
    tight: f64,
    mode: ControlMode,
    reps: usize,
) -> Result<ScanResult> {
    if n_points == 0 || !(wide >= tight && tight > 0.0) {
        return Err(Error::config("scan needs n_points > 0 and wide >= tight > 0"));
    }
    let h = match mode {
        ControlMode::Heterogeneous => 0,
        ControlMode::Uniform => 1,
    };
    let grid = scan_grid(n_points, wide, tight);
    let cfgs: Vec<RunConfig> = grid
        .iter()
        .map(|s| {
            let mut c = cell_config(base, exp, FactorialCell::new(0, h, h));
            c.population.w_sigma = *s;
            c
        })
        .collect();
    let jobs: Vec<(usize, u32)> = (0..n_points).flat_map(|p| (0..reps as u32).map(move |m| (p, m))).collect();
    let flat: Vec<OutcomeRecord> =
        jobs.par_iter().map(|&(p, m)| run_replication(&cfgs[p], m, false).map(|o| o.record)).collect::<Result<_>>()?;
    check_abort_ceiling(flat.iter(), exp.abort_ceiling)?;
    let points = grid
        .iter()
        .zip(flat.chunks(reps.max(1)))
        .map(|(s, r)| ScanPoint { w_sigma: *s, records: r.to_vec() })
        .collect();
    Ok(ScanResult { mode, points })
}

impl ScanResult {
    /// Realized mean representation distance per point.
    pub fn d_repr(&self) -> Vec<f64> {
        self.points.iter().map(|p| crate::stats::mean(&p.values("d_repr_mean").unwrap_or_default())).collect()
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&summary_header(&["point", "w_sigma"]));
        for (i, p) in self.points.iter().enumerate() {
            t.rows.push(summary_row(vec![i.to_string(), fmt_f64(p.w_sigma)], &p.records));
        }
        t
    }

    pub fn records_table(&self) -> Table {
        let rows: Vec<(Vec<String>, OutcomeRecord)> = self
            .points
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                p.records.iter().enumerate().map(move |(m, r)| (vec![i.to_string(), fmt_f64(p.w_sigma), m.to_string()], *r))
            })
            .collect();
        super::replication::records_table(&["point", "w_sigma", "rep"], &rows)
    }

    /// Rebuilds a scan from its per-replication table.
    pub fn from_records_table(t: &Table, mode: ControlMode) -> Result<Self> {
        let point = t.column("point")?;
        let sig = t.column_f64("w_sigma")?;
        let aborted = t.column("aborted")?;
        let cols: Vec<Vec<f64>> = OutcomeRecord::FIELDS.iter().map(|f| t.column_f64(f)).collect::<Result<_>>()?;
        let mut points: Vec<ScanPoint> = Vec::new();
        let mut last = None;
        for row in 0..t.len() {
            if last != Some(point[row]) {
                points.push(ScanPoint { w_sigma: sig[row], records: Vec::new() });
                last = Some(point[row]);
            }
            let v: Vec<f64> = cols.iter().map(|c| c[row]).collect();
            let rec = OutcomeRecord::from_values(&v, aborted[row] == "1")?;
            points.last_mut().expect("point pushed above").records.push(rec);
        }
        Ok(ScanResult { mode, points })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_log_spaced_and_inclusive() {
        let g = scan_grid(15, 1.0, 0.05);
        assert_eq!(g.len(), 15);
        assert!((g[0] - 1.0).abs() < 1e-12 && (g[14] - 0.05).abs() < 1e-12);
        let r: Vec<f64> = g.windows(2).map(|w| w[1] / w[0]).collect();
        for x in &r {
            assert!((x - r[0]).abs() < 1e-12);
        }
        assert_eq!(scan_grid(4, 0.3, 0.3), vec![0.3; 4].iter().map(|x: &f64| (x.ln()).exp()).collect::<Vec<_>>());
    }

    #[test]
    fn realized_distance_increases_with_spread() {
        let base = RunConfig { n_agents: 6, n_steps: 700, burn_in: 200, ..RunConfig::default() };
        let exp = ExperimentSettings::default();
        let s = run_scan(&base, &exp, 4, 1.0, 0.05, ControlMode::Heterogeneous, 3).unwrap();
        assert_eq!(s.points.len(), 4);
        let d = s.d_repr();
        assert!(d.windows(2).all(|w| w[0] > w[1]), "{d:?}");
        let back = ScanResult::from_records_table(&s.records_table(), ControlMode::Heterogeneous).unwrap();
        assert_eq!(back, s);
    }
}

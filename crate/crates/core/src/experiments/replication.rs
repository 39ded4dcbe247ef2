//! One Monte Carlo replication and batches of them.

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{outcome_record, population_distances, OutcomeRecord, ReferenceMeasure};
use crate::sim::{Simulation, Trajectory};
use crate::stats;
use crate::table::{fmt_f64, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutput {
    pub record: OutcomeRecord,
    /// Full path, kept only on request.
    pub trajectory: Option<Trajectory>,
    /// Reason for an abort.
    pub abort_reason: Option<String>,
}

/// Simulates replication `rep` of `cfg` and measures it after burn-in.
///
/// Distances describe the initial population and are measured over the
/// empirical post-burn-in state distribution of the same run. A numeric
/// fault yields an aborted record; configuration errors are returned.
pub fn run_replication(cfg: &RunConfig, rep: u32, keep_trajectory: bool) -> Result<ReplicationOutput> {
    let mut sim = Simulation::new(cfg, rep)?;
    let initial = sim.agents().to_vec();
    if let Err(e) = sim.run_to_end() {
        return match e {
            Error::Numeric { .. } => {
                log::warn!("replication {rep} aborted: {e}");
                Ok(ReplicationOutput { record: OutcomeRecord::aborted(), trajectory: None, abort_reason: Some(e.to_string()) })
            }
            other => Err(other),
        };
    }
    let traj = sim.into_trajectory();
    let mut record = outcome_record(&traj, cfg.burn_in..cfg.n_steps, cfg.metrics.crash_k)?;
    let mu = ReferenceMeasure::empirical(&traj, cfg.burn_in, cfg.metrics.measure_states)?;
    let (d_repr, d_fc) = population_distances(&initial, &mu, cfg.activation)?;
    record.d_repr_mean = d_repr;
    record.d_forecast_mean = d_fc;
    Ok(ReplicationOutput { record, trajectory: keep_trajectory.then_some(traj), abort_reason: None })
}

/// Records for replications `0..reps`, in replication order.
pub fn run_replications(cfg: &RunConfig, reps: usize) -> Result<Vec<OutcomeRecord>> {
    (0..reps as u32).into_par_iter().map(|r| run_replication(cfg, r, false).map(|o| o.record)).collect()
}

/// Fails when the aborted fraction exceeds `ceiling`.
pub fn check_abort_ceiling<'a>(records: impl IntoIterator<Item = &'a OutcomeRecord>, ceiling: f64) -> Result<()> {
    let (mut aborted, mut total) = (0, 0);
    for r in records {
        total += 1;
        aborted += r.aborted as usize;
    }
    if total > 0 && aborted as f64 / total as f64 > ceiling {
        return Err(Error::AbortCeiling { aborted, total, ceiling });
    }
    Ok(())
}

/// Mean, standard error and count of one outcome over finished replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSummary {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn field_values(records: &[OutcomeRecord], field: usize) -> Vec<f64> {
    records.iter().filter(|r| !r.aborted).map(|r| r.values()[field]).filter(|v| v.is_finite()).collect()
}

pub fn summarize(records: &[OutcomeRecord]) -> [FieldSummary; 14] {
    std::array::from_fn(|k| {
        let v = field_values(records, k);
        FieldSummary { mean: stats::mean(&v), se: stats::sem(&v), n: v.len() }
    })
}

/// Per-replication table with leading key columns.
pub fn records_table(keys: &[&str], rows: &[(Vec<String>, OutcomeRecord)]) -> Table {
    let mut header: Vec<&str> = keys.to_vec();
    header.extend(OutcomeRecord::FIELDS);
    header.push("aborted");
    let mut t = Table::new(&header);
    for (k, r) in rows {
        let mut row = k.clone();
        row.extend(r.values().iter().map(|v| fmt_f64(*v)));
        row.push((r.aborted as u8).to_string());
        t.rows.push(row);
    }
    t
}

/// Appends `<field>_mean` and `<field>_se` header names.
pub fn summary_header(keys: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = keys.iter().map(|s| s.to_string()).collect();
    h.push("n_ok".into());
    h.push("n_aborted".into());
    for f in OutcomeRecord::FIELDS {
        h.push(format!("{f}_mean"));
        h.push(format!("{f}_se"));
    }
    h
}

pub fn summary_row(keys: Vec<String>, records: &[OutcomeRecord]) -> Vec<String> {
    let mut row = keys;
    let aborted = records.iter().filter(|r| r.aborted).count();
    row.push((records.len() - aborted).to_string());
    row.push(aborted.to_string());
    for s in summarize(records) {
        row.push(fmt_f64(s.mean));
        row.push(fmt_f64(s.se));
    }
    row
}

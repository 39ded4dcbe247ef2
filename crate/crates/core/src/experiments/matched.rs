//! Matched forecast-distance design: two populations that forecast alike
//! but encode the market differently, compared through a calm and a stress
//! phase.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::replication::check_abort_ceiling;
use crate::agents::{init_population, Agent};
use crate::config::{ExperimentSettings, RunConfig, StressWindow};
use crate::error::{Error, Result};
use crate::metrics::{outcome_record, population_distances, OutcomeRecord, ReferenceMeasure};
use crate::rng::{self, StreamKind};
use crate::sim::{population_spec, replication_center, RecordLevel, Simulation};
use crate::stats::{self, TTest};
use crate::table::{fmt_f64, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    /// Log-uniform `w_sigma` and `theta_sigma` over the full ranges.
    Random,
    /// Half tight-representation/high-readout-spread, half
    /// wide-representation/low-readout-spread.
    Compensating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    StrictMatch,
    Binned,
}

/// One candidate population, reproducible from `(seed, index)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: u32,
    pub w_sigma: f64,
    pub theta_sigma: f64,
    pub d_repr: f64,
    pub d_fc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedDesign {
    pub mode: MatchMode,
    /// Lower representation distance.
    pub group_a: Vec<Candidate>,
    pub group_b: Vec<Candidate>,
    pub d_fc_a: f64,
    pub d_fc_b: f64,
    pub d_repr_a: f64,
    pub d_repr_b: f64,
    /// Fraction of forecast-matched pairs that also show the representation gap.
    pub strict_yield: f64,
    pub pairs_examined: usize,
}

impl MatchedDesign {
    pub fn relative_fc_gap(&self) -> f64 {
        (self.d_fc_a - self.d_fc_b).abs() / self.d_fc_a.max(self.d_fc_b)
    }

    /// Same population in both groups.
    pub fn self_comparison(c: Candidate) -> Self {
        MatchedDesign {
            mode: MatchMode::StrictMatch,
            group_a: vec![c],
            group_b: vec![c],
            d_fc_a: c.d_fc,
            d_fc_b: c.d_fc,
            d_repr_a: c.d_repr,
            d_repr_b: c.d_repr,
            strict_yield: f64::NAN,
            pairs_examined: 0,
        }
    }

    pub fn swapped(&self) -> Self {
        MatchedDesign {
            group_a: self.group_b.clone(),
            group_b: self.group_a.clone(),
            d_fc_a: self.d_fc_b,
            d_fc_b: self.d_fc_a,
            d_repr_a: self.d_repr_b,
            d_repr_b: self.d_repr_a,
            ..self.clone()
        }
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["group", "index", "w_sigma", "theta_sigma", "d_repr", "d_fc"]);
        for (g, members) in [("a", &self.group_a), ("b", &self.group_b)] {
            for c in members {
                t.rows.push(vec![
                    g.into(),
                    c.index.to_string(),
                    fmt_f64(c.w_sigma),
                    fmt_f64(c.theta_sigma),
                    fmt_f64(c.d_repr),
                    fmt_f64(c.d_fc),
                ]);
            }
        }
        t
    }
}

/// Population of candidate `c`. All candidates share the benchmark of
/// replication 0 and draw their standardized noise from their own stream.
pub fn candidate_population(template: &RunConfig, c: &Candidate) -> Result<(Vec<Agent>, DMatrix<f64>)> {
    let center = replication_center(template, 0);
    let mut cfg = template.clone();
    cfg.population.w_sigma = c.w_sigma;
    cfg.population.theta_sigma = c.theta_sigma;
    let spec = population_spec(&cfg, center.clone());
    let mut r = rng::stream(template.seed, c.index, StreamKind::Population, 1);
    Ok((init_population(&spec, &mut r)?, center))
}

/// Reference measure for the design: post-burn-in states of replication 0
/// of the template.
pub fn design_measure(template: &RunConfig) -> Result<ReferenceMeasure> {
    let mut sim = Simulation::new(template, 0)?;
    sim.set_record_level(RecordLevel::Full);
    sim.run_to_end()?;
    ReferenceMeasure::empirical(sim.trajectory(), template.burn_in, template.metrics.measure_states)
}

fn log_uniform<R: Rng>(r: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + r.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Draws and measures `n` candidates.
pub fn candidate_pool(
    template: &RunConfig,
    exp: &ExperimentSettings,
    kind: PoolKind,
    n: usize,
    mu: &ReferenceMeasure,
) -> Result<Vec<Candidate>> {
    let (tight, wide) = (exp.w_sigma_tight, exp.w_sigma_wide);
    let theta = template.population.theta_sigma;
    let specs: Vec<(u32, f64, f64)> = (0..n as u32)
        .map(|i| {
            let mut r = rng::stream(template.seed, i, StreamKind::Aux, 2);
            let (w, th) = match kind {
                PoolKind::Random => (log_uniform(&mut r, tight, wide), log_uniform(&mut r, theta / 4.0, theta * 4.0)),
                PoolKind::Compensating if i % 2 == 0 => {
                    (log_uniform(&mut r, tight, 2.0 * tight), log_uniform(&mut r, theta * 1.5, theta * 3.0))
                }
                PoolKind::Compensating => (log_uniform(&mut r, wide / 2.0, wide), log_uniform(&mut r, theta / 2.0, theta * 1.5)),
            };
            (i, w, th)
        })
        .collect();
    specs
        .par_iter()
        .map(|&(index, w_sigma, theta_sigma)| {
            let mut c = Candidate { index, w_sigma, theta_sigma, d_repr: f64::NAN, d_fc: f64::NAN };
            let (agents, _) = candidate_population(template, &c)?;
            let (dr, df) = population_distances(&agents, mu, template.activation)?;
            c.d_repr = dr;
            c.d_fc = df;
            Ok(c)
        })
        .collect()
}

/// Searches the pool for forecast-matched pairs with a representation gap,
/// falling back to within-decile binning when the strict yield is low.
pub fn build_matched_design(pool: &[Candidate], exp: &ExperimentSettings) -> Result<MatchedDesign> {
    let band = exp.match_band;
    let gap = exp.repr_gap;
    let mut order: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].d_fc > 0.0 && pool[i].d_repr.is_finite()).collect();
    order.sort_by(|&a, &b| pool[a].d_fc.total_cmp(&pool[b].d_fc).then(a.cmp(&b)));

    // Pairs within the forecast band, found by sweeping the sorted order.
    let mut examined = 0usize;
    let mut hits = 0usize;
    let mut best: Option<(f64, f64, usize, usize)> = None;
    for (p, &i) in order.iter().enumerate() {
        for &j in &order[p + 1..] {
            let (fi, fj) = (pool[i].d_fc, pool[j].d_fc);
            if (fj - fi) / fj >= band {
                break;
            }
            examined += 1;
            let (lo, hi) = if pool[i].d_repr <= pool[j].d_repr { (i, j) } else { (j, i) };
            let ratio = pool[hi].d_repr / pool[lo].d_repr;
            if ratio >= gap {
                hits += 1;
                let rel = (fj - fi) / fj;
                let better = match best {
                    None => true,
                    Some((r, q, _, _)) => ratio > r || (ratio == r && rel < q),
                };
                if better {
                    best = Some((ratio, rel, lo, hi));
                }
            }
        }
    }
    let strict_yield = if examined > 0 { hits as f64 / examined as f64 } else { 0.0 };
    if strict_yield >= exp.min_strict_yield {
        let (_, _, a, b) = best.expect("positive yield implies a hit");
        let (a, b) = (pool[a], pool[b]);
        return Ok(MatchedDesign {
            mode: MatchMode::StrictMatch,
            group_a: vec![a],
            group_b: vec![b],
            d_fc_a: a.d_fc,
            d_fc_b: b.d_fc,
            d_repr_a: a.d_repr,
            d_repr_b: b.d_repr,
            strict_yield,
            pairs_examined: examined,
        });
    }
    binned_design(pool, &order, strict_yield, examined)
}

fn binned_design(pool: &[Candidate], order: &[usize], strict_yield: f64, examined: usize) -> Result<MatchedDesign> {
    let n = order.len();
    if n < 30 {
        return Err(Error::Design(format!(
            "strict yield {strict_yield:.4} is below the floor and only {n} usable candidates remain for binning"
        )));
    }
    // Within each forecast-distance decile, the bottom and top representation
    // terciles; the decile with the widest tercile contrast is used.
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    for d in 0..10 {
        let mut bin: Vec<usize> = order[d * n / 10..(d + 1) * n / 10].to_vec();
        bin.sort_by(|&a, &b| pool[a].d_repr.total_cmp(&pool[b].d_repr).then(a.cmp(&b)));
        let k = bin.len() / 3;
        if k == 0 {
            continue;
        }
        let low = bin[..k].to_vec();
        let high = bin[bin.len() - k..].to_vec();
        let mr = |g: &[usize]| stats::mean(&g.iter().map(|&i| pool[i].d_repr).collect::<Vec<_>>());
        let ratio = mr(&high) / mr(&low);
        if best.as_ref().is_none_or(|(r, _, _)| ratio > *r) {
            best = Some((ratio, low, high));
        }
    }
    let (_, low, high) = best.ok_or_else(|| Error::Design("no populated forecast-distance bins".into()))?;
    let ga: Vec<Candidate> = low.iter().map(|&i| pool[i]).collect();
    let gb: Vec<Candidate> = high.iter().map(|&i| pool[i]).collect();
    let m = |g: &[Candidate], f: fn(&Candidate) -> f64| stats::mean(&g.iter().map(f).collect::<Vec<_>>());
    Ok(MatchedDesign {
        mode: MatchMode::Binned,
        d_fc_a: m(&ga, |c| c.d_fc),
        d_fc_b: m(&gb, |c| c.d_fc),
        d_repr_a: m(&ga, |c| c.d_repr),
        d_repr_b: m(&gb, |c| c.d_repr),
        group_a: ga,
        group_b: gb,
        strict_yield,
        pairs_examined: examined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Calm,
    Stress,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub phase: Phase,
    pub field: &'static str,
    pub mean_a: f64,
    pub mean_b: f64,
    pub test: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedResult {
    pub design: MatchedDesign,
    pub calm_a: Vec<OutcomeRecord>,
    pub calm_b: Vec<OutcomeRecord>,
    pub stress_a: Vec<OutcomeRecord>,
    pub stress_b: Vec<OutcomeRecord>,
    pub comparisons: Vec<Comparison>,
    /// Calm-phase differences in forecast and position correlation and in
    /// volatility are all insignificant at 5%.
    pub matched_ok: bool,
    /// Stress comparisons count as evidence only when the calm phase matched.
    pub evidential: bool,
}

/// Fields checked by the calm-phase diagnostic.
pub const DIAGNOSTIC_FIELDS: [&str; 3] = ["rho_forecast", "rho_position", "vol"];
const ALPHA: f64 = 0.05;

/// Runs both groups through a calm then a stress phase. Replication `m`
/// uses the same shock stream in both groups.
pub fn run_matched_experiment(
    template: &RunConfig,
    design: &MatchedDesign,
    calm_steps: usize,
    stress_steps: usize,
    stress_scale: f64,
    reps: usize,
    abort_ceiling: f64,
) -> Result<MatchedResult> {
    if design.group_a.is_empty() || design.group_b.is_empty() {
        return Err(Error::Design("matched design has an empty group".into()));
    }
    let mut cfg = template.clone();
    let start = template.burn_in + calm_steps;
    cfg.n_steps = start + stress_steps;
    cfg.stress = Some(StressWindow { start, len: stress_steps, scale: stress_scale });
    cfg.validate()?;
    let jobs: Vec<(usize, u32)> = (0..2).flat_map(|g| (0..reps as u32).map(move |m| (g, m))).collect();
    let out: Vec<(OutcomeRecord, OutcomeRecord)> = jobs
        .par_iter()
        .map(|&(g, m)| {
            let members = if g == 0 { &design.group_a } else { &design.group_b };
            let c = &members[m as usize % members.len()];
            phase_records(&cfg, c, m, start)
        })
        .collect::<Result<_>>()?;
    let (a, b) = out.split_at(reps);
    let calm_a: Vec<OutcomeRecord> = a.iter().map(|x| x.0).collect();
    let stress_a: Vec<OutcomeRecord> = a.iter().map(|x| x.1).collect();
    let calm_b: Vec<OutcomeRecord> = b.iter().map(|x| x.0).collect();
    let stress_b: Vec<OutcomeRecord> = b.iter().map(|x| x.1).collect();
    check_abort_ceiling(calm_a.iter().chain(&calm_b), abort_ceiling)?;

    let mut comparisons = Vec::new();
    for (phase, ra, rb) in [(Phase::Calm, &calm_a, &calm_b), (Phase::Stress, &stress_a, &stress_b)] {
        for (k, field) in OutcomeRecord::FIELDS.iter().enumerate() {
            let xa = super::replication::field_values(ra, k);
            let xb = super::replication::field_values(rb, k);
            comparisons.push(Comparison {
                phase,
                field,
                mean_a: stats::mean(&xa),
                mean_b: stats::mean(&xb),
                test: stats::welch_t(&xa, &xb),
            });
        }
    }
    let matched_ok = DIAGNOSTIC_FIELDS.iter().all(|f| {
        comparisons
            .iter()
            .find(|c| c.phase == Phase::Calm && c.field == *f)
            .and_then(|c| c.test)
            .is_some_and(|t| t.p_value >= ALPHA)
    });
    Ok(MatchedResult {
        design: design.clone(),
        calm_a,
        calm_b,
        stress_a,
        stress_b,
        comparisons,
        matched_ok,
        evidential: matched_ok,
    })
}

fn phase_records(cfg: &RunConfig, c: &Candidate, rep: u32, start: usize) -> Result<(OutcomeRecord, OutcomeRecord)> {
    let (agents, center) = candidate_population(cfg, c)?;
    let mut sim = Simulation::with_population(cfg, agents, center, rep)?;
    match sim.run_to_end() {
        Ok(()) => {}
        Err(Error::Numeric { .. }) => return Ok((OutcomeRecord::aborted(), OutcomeRecord::aborted())),
        Err(e) => return Err(e),
    }
    let traj = sim.trajectory();
    let mut calm = outcome_record(traj, cfg.burn_in..start, cfg.metrics.crash_k)?;
    let mut stress = outcome_record(traj, start..cfg.n_steps, cfg.metrics.crash_k)?;
    for r in [&mut calm, &mut stress] {
        r.d_repr_mean = c.d_repr;
        r.d_forecast_mean = c.d_fc;
    }
    Ok((calm, stress))
}

impl MatchedResult {
    pub fn comparison_table(&self) -> Table {
        let mut t = Table::new(&["phase", "field", "mean_a", "mean_b", "diff", "se", "t", "p_value", "evidential"]);
        for c in &self.comparisons {
            let (d, se, tt, p) = c.test.map_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN), |t| (t.diff, t.se, t.t, t.p_value));
            let evid = match c.phase {
                Phase::Calm => "diagnostic",
                Phase::Stress if self.evidential => "1",
                Phase::Stress => "0",
            };
            t.rows.push(vec![
                match c.phase {
                    Phase::Calm => "calm".into(),
                    Phase::Stress => "stress".into(),
                },
                c.field.to_string(),
                fmt_f64(c.mean_a),
                fmt_f64(c.mean_b),
                fmt_f64(d),
                fmt_f64(se),
                fmt_f64(tt),
                fmt_f64(p),
                evid.into(),
            ]);
        }
        t
    }

    pub fn records_table(&self) -> Table {
        let mut rows = Vec::new();
        for (phase, g, recs) in [
            ("calm", "a", &self.calm_a),
            ("calm", "b", &self.calm_b),
            ("stress", "a", &self.stress_a),
            ("stress", "b", &self.stress_b),
        ] {
            for (m, r) in recs.iter().enumerate() {
                rows.push((vec![phase.to_string(), g.to_string(), m.to_string()], *r));
            }
        }
        super::replication::records_table(&["phase", "group", "rep"], &rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (RunConfig, ExperimentSettings) {
        let cfg = RunConfig { n_agents: 6, n_steps: 700, burn_in: 200, ..RunConfig::default() };
        (cfg, ExperimentSettings::default())
    }

    #[test]
    fn compensating_pool_yields_strict_match() {
        let (cfg, exp) = small();
        let mu = design_measure(&cfg).unwrap();
        let pool = candidate_pool(&cfg, &exp, PoolKind::Compensating, 200, &mu).unwrap();
        let d = build_matched_design(&pool, &exp).unwrap();
        assert_eq!(d.mode, MatchMode::StrictMatch, "yield {}", d.strict_yield);
        // Recomputation oracle on the selected pair.
        let (pa, _) = candidate_population(&cfg, &d.group_a[0]).unwrap();
        let (pb, _) = candidate_population(&cfg, &d.group_b[0]).unwrap();
        let (ra, fa) = population_distances(&pa, &mu, cfg.activation).unwrap();
        let (rb, fb) = population_distances(&pb, &mu, cfg.activation).unwrap();
        assert!((fa - fb).abs() / fa.max(fb) < 0.05);
        assert!(rb >= 2.0 * ra);
        assert!(d.d_repr_a < d.d_repr_b);
    }

    #[test]
    fn single_spec_pool_cannot_match_strictly() {
        let (cfg, exp) = small();
        let pool: Vec<Candidate> = (0..60)
            .map(|i| Candidate { index: i, w_sigma: 0.5, theta_sigma: 0.1, d_repr: 1.0 + 0.01 * (i % 7) as f64, d_fc: 0.2 + 0.001 * i as f64 })
            .collect();
        let d = build_matched_design(&pool, &exp).unwrap();
        assert_eq!(d.mode, MatchMode::Binned);
        assert_eq!(d.strict_yield, 0.0);
        assert!(build_matched_design(&pool[..10], &exp).is_err());
        let _ = cfg;
    }

    #[test]
    fn self_comparison_is_null_and_swap_flips_signs() {
        let (cfg, exp) = small();
        let mu = design_measure(&cfg).unwrap();
        let pool = candidate_pool(&cfg, &exp, PoolKind::Compensating, 4, &mu).unwrap();
        let same = MatchedDesign::self_comparison(pool[0]);
        let r = run_matched_experiment(&cfg, &same, 300, 150, 5.0, 4, 0.1).unwrap();
        assert!(r.matched_ok);
        for c in &r.comparisons {
            if let Some(t) = c.test {
                assert_eq!(t.diff, 0.0);
            }
        }
        let pair = MatchedDesign { group_b: vec![pool[1]], d_fc_b: pool[1].d_fc, d_repr_b: pool[1].d_repr, ..same };
        let fwd = run_matched_experiment(&cfg, &pair, 300, 150, 5.0, 4, 0.1).unwrap();
        let back = run_matched_experiment(&cfg, &pair.swapped(), 300, 150, 5.0, 4, 0.1).unwrap();
        for (x, y) in fwd.comparisons.iter().zip(&back.comparisons) {
            if let (Some(a), Some(b)) = (x.test, y.test) {
                assert_eq!(a.diff, -b.diff);
            }
        }
    }
}

//! Homogeneity metrology and systemic outcome statistics.
//!
//! Distances between agents are evaluated over a [`ReferenceMeasure`], a
//! weighted set of public states. All pairwise functions are symmetric,
//! nonnegative and vanish on identical agents.

pub mod assignment;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::agents::{encode_into, forecast, Activation, Agent};
use crate::error::{Error, Result};
use crate::sim::Trajectory;
use crate::state::{AgentParams, AgentState};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Empirical,
    Grid,
    Weighted,
}

/// Weighted set of public states.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMeasure {
    pub kind: MeasureKind,
    /// Flattened states, `dim` entries each.
    pub states: Vec<f64>,
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl ReferenceMeasure {
    pub fn new(kind: MeasureKind, states: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> Result<Self> {
        let dim = states.first().map(Vec::len).ok_or_else(|| Error::data("reference measure has no states"))?;
        if dim == 0 || states.iter().any(|s| s.len() != dim) {
            return Err(Error::data("reference states must share a nonzero dimension"));
        }
        let n = states.len();
        let weights = match weights {
            None => vec![1.0 / n as f64; n],
            Some(w) => {
                if w.len() != n || w.iter().any(|x| !(*x >= 0.0)) {
                    return Err(Error::data("weights must be nonnegative with one per state"));
                }
                let total: f64 = w.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::data("weights must not all be zero"));
                }
                w.iter().map(|x| x / total).collect()
            }
        };
        Ok(ReferenceMeasure { kind, states: states.concat(), dim, weights })
    }

    /// Uniform measure over a benchmark grid of states.
    pub fn grid(states: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(MeasureKind::Grid, states, None)
    }

    /// Uniform measure over recorded states from step `from` on, thinned to
    /// at most `max_states` evenly spaced states.
    pub fn empirical(traj: &Trajectory, from: usize, max_states: usize) -> Result<Self> {
        Self::new(MeasureKind::Empirical, thin_states(traj, from, max_states), None)
    }

    /// Axis grid around the empirical mean state: each coordinate in turn
    /// moved to `mean + k sd` for the given offsets `k`, the others held at
    /// their means.
    pub fn axis_grid(traj: &Trajectory, from: usize, offsets: &[f64]) -> Result<Self> {
        let states = thin_states(traj, from, usize::MAX);
        if states.len() < 2 || offsets.is_empty() {
            return Err(Error::data("axis grid needs at least two recorded states and one offset"));
        }
        let dim = traj.state_dim;
        let cols: Vec<Vec<f64>> = (0..dim).map(|c| states.iter().map(|s| s[c]).collect()).collect();
        let mean: Vec<f64> = cols.iter().map(|c| stats::mean(c)).collect();
        let sd: Vec<f64> = cols.iter().map(|c| stats::sd(c)).collect();
        let mut grid = Vec::with_capacity(dim * offsets.len());
        for c in 0..dim {
            for k in offsets {
                let mut s = mean.clone();
                s[c] += k * sd[c];
                grid.push(s);
            }
        }
        Self::grid(grid)
    }

    /// Empirical states with weight `1 + c` on states whose volatility entry
    /// is in the top decile and `1` elsewhere.
    pub fn stress_weighted(traj: &Trajectory, from: usize, max_states: usize, c: f64) -> Result<Self> {
        let states = thin_states(traj, from, max_states);
        if states.is_empty() {
            return Err(Error::data("reference measure has no states"));
        }
        let vi = traj.state_dim - 2;
        let vols: Vec<f64> = states.iter().map(|s| s[vi]).collect();
        let cut = stats::quantile(&vols, 0.9);
        let w = vols.iter().map(|&v| if v > cut { 1.0 + c } else { 1.0 }).collect();
        Self::new(MeasureKind::Weighted, states, Some(w))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.dim..(t + 1) * self.dim]
    }
}

fn thin_states(traj: &Trajectory, from: usize, max_states: usize) -> Vec<Vec<f64>> {
    let n = traj.n_states();
    if from >= n || max_states == 0 {
        return Vec::new();
    }
    let avail = n - from;
    let take = avail.min(max_states);
    (0..take).map(|k| traj.state(from + k * avail / take).to_vec()).collect()
}

/// Feature maps `h_i(S_t)` and forecasts `f_i(S_t)` of a population over a
/// measure, computed once and reused for every pair.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Per agent, `len x K` features, state-major.
    pub features: Vec<Vec<f64>>,
    /// Per agent, one forecast per state.
    pub forecasts: Vec<Vec<f64>>,
    pub k: usize,
    pub weights: Vec<f64>,
}

pub fn encode_over(agents: &[&AgentState], mu: &ReferenceMeasure, act: Activation) -> Result<Encoded> {
    if mu.is_empty() {
        return Err(Error::data("reference measure has no states"));
    }
    let k = agents.first().map(|a| a.n_features()).unwrap_or(0);
    let mut features = Vec::with_capacity(agents.len());
    let mut forecasts = Vec::with_capacity(agents.len());
    for a in agents {
        if a.state_dim() != mu.dim || a.n_features() != k {
            return Err(Error::data("agents and reference measure must share K and the state dimension"));
        }
        let mut h = vec![0.0; mu.len() * k];
        let mut f = Vec::with_capacity(mu.len());
        for t in 0..mu.len() {
            let out = &mut h[t * k..(t + 1) * k];
            encode_into(&a.w, mu.state(t), act, out);
            f.push(forecast(&a.theta, out));
        }
        features.push(h);
        forecasts.push(f);
    }
    Ok(Encoded { features, forecasts, k, weights: mu.weights.clone() })
}

impl Encoded {
    pub fn n_agents(&self) -> usize {
        self.features.len()
    }

    pub fn repr(&self, i: usize, j: usize) -> f64 {
        let (hi, hj) = (&self.features[i], &self.features[j]);
        let mut acc = 0.0;
        for (t, w) in self.weights.iter().enumerate() {
            let s: f64 = hi[t * self.k..(t + 1) * self.k]
                .iter()
                .zip(&hj[t * self.k..(t + 1) * self.k])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            acc += w * s;
        }
        acc.sqrt()
    }

    pub fn forecast(&self, i: usize, j: usize) -> f64 {
        let acc: f64 = self
            .weights
            .iter()
            .zip(self.forecasts[i].iter().zip(&self.forecasts[j]))
            .map(|(w, (a, b))| w * (a - b) * (a - b))
            .sum();
        acc.sqrt()
    }

    /// Cost `C[k][l] = sum_t w_t (h_ik - h_jl)^2`, row-major.
    pub fn alignment_cost(&self, i: usize, j: usize) -> Vec<f64> {
        let k = self.k;
        let (hi, hj) = (&self.features[i], &self.features[j]);
        let mut c = vec![0.0; k * k];
        for (t, w) in self.weights.iter().enumerate() {
            let a = &hi[t * k..(t + 1) * k];
            let b = &hj[t * k..(t + 1) * k];
            for r in 0..k {
                for s in 0..k {
                    let d = a[r] - b[s];
                    c[r * k + s] += w * d * d;
                }
            }
        }
        c
    }

    /// Representation distance after the best relabelling of agent `j`'s
    /// hidden units.
    pub fn repr_aligned(&self, i: usize, j: usize) -> f64 {
        let c = self.alignment_cost(i, j);
        let (_, total) = assignment::solve(&c, self.k);
        // The optimum can only undercut the identity matching; guard against
        // rounding in the opposite direction.
        total.max(0.0).sqrt().min(self.repr(i, j))
    }

    /// Cross-sectional forecast variance at each state.
    pub fn forecast_disagreement(&self) -> Vec<f64> {
        let n = self.n_agents() as f64;
        (0..self.weights.len())
            .map(|t| {
                let m = self.forecasts.iter().map(|f| f[t]).sum::<f64>() / n;
                self.forecasts.iter().map(|f| (f[t] - m).powi(2)).sum::<f64>() / n
            })
            .collect()
    }

    pub fn max_feature_norm(&self, i: usize) -> f64 {
        self.features[i].chunks(self.k).map(|h| h.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    fn pairwise(&self, f: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
        let n = self.n_agents();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let d = f(i, j);
                m[(i, j)] = d;
                m[(j, i)] = d;
            }
        }
        m
    }
}

pub fn repr_distance(a: &AgentState, b: &AgentState, mu: &ReferenceMeasure, act: Activation) -> Result<f64> {
    Ok(encode_over(&[a, b], mu, act)?.repr(0, 1))
}

pub fn forecast_distance(a: &AgentState, b: &AgentState, mu: &ReferenceMeasure, act: Activation) -> Result<f64> {
    Ok(encode_over(&[a, b], mu, act)?.forecast(0, 1))
}

pub fn aligned_repr_distance(a: &AgentState, b: &AgentState, mu: &ReferenceMeasure, act: Activation) -> Result<f64> {
    Ok(encode_over(&[a, b], mu, act)?.repr_aligned(0, 1))
}

/// Risk-control profile `(gamma, position cap)`.
pub fn risk_profile(p: &AgentParams) -> [f64; 2] {
    [p.gamma, p.d_max]
}

/// Weighted Euclidean distance of risk profiles, `sqrt(sum w_k d_k^2)`.
pub fn risk_distance(a: &AgentParams, b: &AgentParams, weights: &[f64; 2]) -> f64 {
    let (x, y) = (risk_profile(a), risk_profile(b));
    (0..2).map(|k| weights[k] * (x[k] - y[k]).powi(2)).sum::<f64>().sqrt()
}

/// Inverse cross-sectional variances of the risk profile; components with no
/// dispersion get unit weight.
pub fn risk_weights(params: &[AgentParams]) -> [f64; 2] {
    let mut w = [1.0; 2];
    for (k, wk) in w.iter_mut().enumerate() {
        let col: Vec<f64> = params.iter().map(|p| risk_profile(p)[k]).collect();
        let v = stats::variance(&col);
        if v > 0.0 {
            *wk = 1.0 / v;
        }
    }
    w
}

/// Mean over unordered pairs `i < j` of a symmetric matrix.
pub fn mean_pairwise(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..i {
            s += m[(i, j)];
        }
    }
    s / (n * (n - 1) / 2) as f64
}

fn pairwise_values(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in 0..i {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// 95th percentile of the off-diagonal entries, the normalizer for the
/// composite index.
pub fn p95_scale(m: &DMatrix<f64>) -> f64 {
    stats::quantile(&pairwise_values(m), 0.95)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeWeights(pub [f64; 3]);

impl Default for CompositeWeights {
    fn default() -> Self {
        CompositeWeights([0.5, 0.3, 0.2])
    }
}

impl CompositeWeights {
    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.0.iter().sum();
        if self.0.iter().any(|w| !(*w >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("composite weights must be nonnegative and sum to 1, got {:?}", self.0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport {
    pub d_repr: DMatrix<f64>,
    pub d_forecast: DMatrix<f64>,
    pub d_risk: DMatrix<f64>,
    pub d_repr_aligned: DMatrix<f64>,
    pub d_repr_mean: f64,
    pub d_forecast_mean: f64,
    pub d_risk_mean: f64,
    pub d_repr_aligned_mean: f64,
    pub composite: DMatrix<f64>,
    pub homogeneity: DMatrix<f64>,
    pub homogeneity_mean: f64,
}

/// Options for [`distance_report`].
#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub weights: CompositeWeights,
    /// Fixed risk weights; inverse variances of this population otherwise.
    pub risk_weights: Option<[f64; 2]>,
    /// Fixed component normalizers; this population's 95th percentiles
    /// otherwise.
    pub scales: Option<[f64; 3]>,
    pub aligned: bool,
}

pub fn distance_report(agents: &[Agent], mu: &ReferenceMeasure, act: Activation, opts: &ReportOptions) -> Result<DistanceReport> {
    opts.weights.validate()?;
    let states: Vec<&AgentState> = agents.iter().map(|a| &a.state).collect();
    let enc = encode_over(&states, mu, act)?;
    let params: Vec<AgentParams> = agents.iter().map(|a| a.params).collect();
    let rw = opts.risk_weights.unwrap_or_else(|| risk_weights(&params));
    let d_repr = enc.pairwise(|i, j| enc.repr(i, j));
    let d_forecast = enc.pairwise(|i, j| enc.forecast(i, j));
    let d_risk = enc.pairwise(|i, j| risk_distance(&params[i], &params[j], &rw));
    let d_repr_aligned = if opts.aligned { enc.pairwise(|i, j| enc.repr_aligned(i, j)) } else { d_repr.clone() };
    let comp = composite_homogeneity(&d_repr, &d_forecast, &d_risk, opts.weights, opts.scales)?;
    Ok(DistanceReport {
        d_repr_mean: mean_pairwise(&d_repr),
        d_forecast_mean: mean_pairwise(&d_forecast),
        d_risk_mean: mean_pairwise(&d_risk),
        d_repr_aligned_mean: mean_pairwise(&d_repr_aligned),
        d_repr,
        d_forecast,
        d_risk,
        d_repr_aligned,
        composite: comp.composite,
        homogeneity: comp.homogeneity,
        homogeneity_mean: comp.homogeneity_mean,
    })
}

/// Mean pairwise representation and forecast distances of a population.
pub fn population_distances(agents: &[Agent], mu: &ReferenceMeasure, act: Activation) -> Result<(f64, f64)> {
    let states: Vec<&AgentState> = agents.iter().map(|a| &a.state).collect();
    let enc = encode_over(&states, mu, act)?;
    let n = enc.n_agents();
    if n < 2 {
        return Ok((0.0, 0.0));
    }
    let (mut r, mut f) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..i {
            r += enc.repr(i, j);
            f += enc.forecast(i, j);
        }
    }
    let m = (n * (n - 1) / 2) as f64;
    Ok((r / m, f / m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub composite: DMatrix<f64>,
    pub homogeneity: DMatrix<f64>,
    pub homogeneity_mean: f64,
    pub scales: [f64; 3],
}

/// Weighted sum of normalized component distances, `H = 1 - D` and its mean
/// over unordered pairs. A component whose normalizer is zero contributes 0.
pub fn composite_homogeneity(
    d_repr: &DMatrix<f64>,
    d_forecast: &DMatrix<f64>,
    d_risk: &DMatrix<f64>,
    weights: CompositeWeights,
    scales: Option<[f64; 3]>,
) -> Result<Composite> {
    weights.validate()?;
    let comps = [d_repr, d_forecast, d_risk];
    let scales = scales.unwrap_or_else(|| [p95_scale(d_repr), p95_scale(d_forecast), p95_scale(d_risk)]);
    let n = d_repr.nrows();
    let mut composite = DMatrix::zeros(n, n);
    for (c, (m, s)) in comps.iter().zip(scales).enumerate() {
        if s > 0.0 && weights.0[c] > 0.0 {
            composite += *m * (weights.0[c] / s);
        }
    }
    let (homogeneity, homogeneity_mean) = homogeneity_from_composite(&composite);
    Ok(Composite { composite, homogeneity, homogeneity_mean, scales })
}

pub fn homogeneity_from_composite(d: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let h = d.map(|x| 1.0 - x);
    let n = d.nrows();
    let mean = if n < 2 { 1.0 } else { 1.0 - mean_pairwise(d) };
    (h, mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncStats {
    pub rho_forecast: f64,
    pub rho_position: f64,
    /// Pairs skipped because one series had zero variance.
    pub skipped_forecast: usize,
    pub skipped_position: usize,
}

/// Mean pairwise Pearson correlation of agent series; `(mean, skipped)`.
/// The mean is NaN when every pair was skipped.
pub fn mean_pairwise_correlation(series: &[&[f64]]) -> (f64, usize) {
    let centered: Vec<(Vec<f64>, f64)> = series
        .iter()
        .map(|s| {
            let m = stats::mean(s);
            let c: Vec<f64> = s.iter().map(|x| x - m).collect();
            let ss = c.iter().map(|x| x * x).sum();
            (c, ss)
        })
        .collect();
    let (mut acc, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for i in 0..centered.len() {
        for j in 0..i {
            let (ci, si) = &centered[i];
            let (cj, sj) = &centered[j];
            if *si <= 0.0 || *sj <= 0.0 {
                skipped += 1;
                continue;
            }
            let cov: f64 = ci.iter().zip(cj).map(|(a, b)| a * b).sum();
            acc += (cov / (si * sj).sqrt()).clamp(-1.0, 1.0);
            n += 1;
        }
    }
    (if n == 0 { f64::NAN } else { acc / n as f64 }, skipped)
}

/// Forecast and position synchronization over columns `from..` of
/// `[agent][step]` series.
pub fn synchronization(forecasts: &[Vec<f64>], positions: &[Vec<f64>], from: usize) -> Result<SyncStats> {
    let n = forecasts.len();
    let steps = forecasts.first().map_or(0, |s| s.len().saturating_sub(from));
    if n < 2 || positions.len() != n {
        return Err(Error::data("synchronization needs at least two agents"));
    }
    if steps < 3 {
        return Err(Error::data("synchronization needs at least three steps"));
    }
    let f: Vec<&[f64]> = forecasts.iter().map(|s| &s[from..]).collect();
    let p: Vec<&[f64]> = positions.iter().map(|s| &s[from..]).collect();
    let (rho_forecast, skipped_forecast) = mean_pairwise_correlation(&f);
    let (rho_position, skipped_position) = mean_pairwise_correlation(&p);
    Ok(SyncStats { rho_forecast, rho_position, skipped_forecast, skipped_position })
}

/// Rolling-window synchronization evaluated at every `every`-th step; each
/// entry is `(end step, stats over the trailing window)`.
pub fn rolling_synchronization(
    forecasts: &[Vec<f64>],
    positions: &[Vec<f64>],
    window: usize,
    every: usize,
) -> Vec<(usize, SyncStats)> {
    let len = forecasts.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    let mut end = window;
    while end <= len && every > 0 {
        let f: Vec<Vec<f64>> = forecasts.iter().map(|s| s[end - window..end].to_vec()).collect();
        let p: Vec<Vec<f64>> = positions.iter().map(|s| s[end - window..end].to_vec()).collect();
        if let Ok(s) = synchronization(&f, &p, 0) {
            out.push((end, s));
        }
        end += every;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concentration {
    /// `None` where no agent traded.
    pub per_step: Vec<Option<f64>>,
    pub mean: f64,
}

/// Net-to-gross order-flow ratio per step from `[agent][step]` trades.
pub fn concentration(trades: &[Vec<f64>], from: usize) -> Concentration {
    let steps = trades.first().map_or(0, Vec::len);
    let mut per_step = Vec::with_capacity(steps.saturating_sub(from));
    let (mut acc, mut n) = (0.0, 0usize);
    for t in from..steps {
        let net: f64 = trades.iter().map(|a| a[t]).sum();
        let gross: f64 = trades.iter().map(|a| a[t].abs()).sum();
        if gross > 0.0 {
            let c = (net.abs() / gross).min(1.0);
            acc += c;
            n += 1;
            per_step.push(Some(c));
        } else {
            per_step.push(None);
        }
    }
    Concentration { per_step, mean: if n == 0 { f64::NAN } else { acc / n as f64 } }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRisk {
    pub crash_freq: f64,
    pub var1: f64,
    pub var5: f64,
    pub max_drawdown: f64,
}

pub const MIN_TAIL_OBS: usize = 100;

pub fn tail_risk(returns: &[f64], prices: &[f64], crash_k: f64) -> Result<TailRisk> {
    if returns.len() < MIN_TAIL_OBS {
        return Err(Error::data(format!("tail statistics need at least {MIN_TAIL_OBS} returns, got {}", returns.len())));
    }
    let sd = stats::sd(returns);
    // Rounding noise on a constant series is not dispersion.
    let scale = returns.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let crashes = if sd > 1e-12 * scale { returns.iter().filter(|r| r.abs() > crash_k * sd).count() } else { 0 };
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(TailRisk {
        crash_freq: crashes as f64 / returns.len() as f64,
        var1: stats::quantile_sorted(&sorted, 0.01),
        var5: stats::quantile_sorted(&sorted, 0.05),
        max_drawdown: max_drawdown(prices),
    })
}

pub fn max_drawdown(prices: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut dd: f64 = 0.0;
    for &p in prices {
        peak = peak.max(p);
        dd = dd.max(peak - p);
    }
    dd
}

/// Systemic statistics of one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub rho_forecast: f64,
    pub rho_position: f64,
    pub concentration_mean: f64,
    pub lambda_mean: f64,
    pub psi_mean: f64,
    pub inv_stress_mean: f64,
    pub lambda_peak: f64,
    pub crash_freq: f64,
    pub var1: f64,
    pub var5: f64,
    pub max_drawdown: f64,
    pub vol: f64,
    /// Mean pairwise representation distance of the initial population.
    pub d_repr_mean: f64,
    /// Mean pairwise forecast distance of the initial population.
    pub d_forecast_mean: f64,
    pub aborted: bool,
}

impl OutcomeRecord {
    pub const FIELDS: [&'static str; 14] = [
        "rho_forecast",
        "rho_position",
        "concentration_mean",
        "lambda_mean",
        "psi_mean",
        "inv_stress_mean",
        "lambda_peak",
        "crash_freq",
        "var1",
        "var5",
        "max_drawdown",
        "vol",
        "d_repr_mean",
        "d_forecast_mean",
    ];

    pub fn aborted() -> Self {
        let n = f64::NAN;
        OutcomeRecord {
            rho_forecast: n,
            rho_position: n,
            concentration_mean: n,
            lambda_mean: n,
            psi_mean: n,
            inv_stress_mean: n,
            lambda_peak: n,
            crash_freq: n,
            var1: n,
            var5: n,
            max_drawdown: n,
            vol: n,
            d_repr_mean: n,
            d_forecast_mean: n,
            aborted: true,
        }
    }

    pub fn values(&self) -> [f64; 14] {
        [
            self.rho_forecast,
            self.rho_position,
            self.concentration_mean,
            self.lambda_mean,
            self.psi_mean,
            self.inv_stress_mean,
            self.lambda_peak,
            self.crash_freq,
            self.var1,
            self.var5,
            self.max_drawdown,
            self.vol,
            self.d_repr_mean,
            self.d_forecast_mean,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::FIELDS.iter().position(|f| *f == name).map(|i| self.values()[i])
    }

    pub fn from_values(v: &[f64], aborted: bool) -> Result<Self> {
        if v.len() != 14 {
            return Err(Error::data(format!("outcome record needs 14 values, got {}", v.len())));
        }
        Ok(OutcomeRecord {
            rho_forecast: v[0],
            rho_position: v[1],
            concentration_mean: v[2],
            lambda_mean: v[3],
            psi_mean: v[4],
            inv_stress_mean: v[5],
            lambda_peak: v[6],
            crash_freq: v[7],
            var1: v[8],
            var5: v[9],
            max_drawdown: v[10],
            vol: v[11],
            d_repr_mean: v[12],
            d_forecast_mean: v[13],
            aborted,
        })
    }
}

/// Outcome statistics over steps `range` of a full trajectory. Distances are
/// left NaN for the caller to fill.
pub fn outcome_record(traj: &Trajectory, range: std::ops::Range<usize>, crash_k: f64) -> Result<OutcomeRecord> {
    if range.end > traj.len() || range.start >= range.end {
        return Err(Error::data(format!("outcome window {range:?} is outside the {}-step trajectory", traj.len())));
    }
    let from = range.start;
    let slice = |v: &Vec<f64>| -> Vec<f64> { v[range.clone()].to_vec() };
    let fc: Vec<Vec<f64>> = traj.forecasts.iter().map(slice).collect();
    let pos: Vec<Vec<f64>> = traj.positions.iter().map(slice).collect();
    let tr: Vec<Vec<f64>> = traj.trades.iter().map(slice).collect();
    let sync = if fc.len() >= 2 {
        synchronization(&fc, &pos, 0)?
    } else {
        SyncStats { rho_forecast: f64::NAN, rho_position: f64::NAN, skipped_forecast: 0, skipped_position: 0 }
    };
    let returns = &traj.returns[range.clone()];
    // Drawdown runs over prices including the level entering the window.
    let mut prices = Vec::with_capacity(returns.len() + 1);
    prices.push(if from == 0 { traj.initial_price } else { traj.prices[from - 1] });
    prices.extend_from_slice(&traj.prices[range.clone()]);
    let tail = tail_risk(returns, &prices, crash_k)?;
    let lam = &traj.lambdas[range.clone()];
    Ok(OutcomeRecord {
        rho_forecast: sync.rho_forecast,
        rho_position: sync.rho_position,
        concentration_mean: concentration(&tr, 0).mean,
        lambda_mean: stats::mean(lam),
        psi_mean: stats::mean(&traj.psis[range.clone()]),
        inv_stress_mean: stats::mean(&traj.inventories[range.clone()].iter().map(|x| x.abs()).collect::<Vec<_>>()),
        lambda_peak: lam.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        crash_freq: tail.crash_freq,
        var1: tail.var1,
        var5: tail.var5,
        max_drawdown: tail.max_drawdown,
        vol: stats::sd(returns),
        d_repr_mean: f64::NAN,
        d_forecast_mean: f64::NAN,
        aborted: false,
    })
}

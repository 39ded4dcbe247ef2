//! Critical representation distance from scan data.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::scan::ScanResult;
use super::spline::SmoothingSpline;
use crate::error::{Error, Result};
use crate::stats;
use crate::table::{fmt_f64, Table};

/// Smallest relative SSE reduction a hinge must achieve over one line.
pub const MIN_IMPROVEMENT: f64 = 0.05;
/// Breakpoint candidates in the segmented grid search.
const BREAK_GRID: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    Segmented,
    SplineCurvature,
    EventCrossing,
}

impl ThresholdMethod {
    pub const ALL: [ThresholdMethod; 3] =
        [ThresholdMethod::Segmented, ThresholdMethod::SplineCurvature, ThresholdMethod::EventCrossing];

    pub fn name(&self) -> &'static str {
        match self {
            ThresholdMethod::Segmented => "segmented",
            ThresholdMethod::SplineCurvature => "spline_curvature",
            ThresholdMethod::EventCrossing => "event_crossing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub method: ThresholdMethod,
    pub d_crit: f64,
    /// Segmented: hinge R^2. Spline and event: GCV score of the smoother.
    pub fit_quality: f64,
    pub outcome_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ThresholdOutcome {
    Found(ThresholdEstimate),
    NoThreshold { method: ThresholdMethod, outcome_name: String, reason: String },
}

impl ThresholdOutcome {
    pub fn d_crit(&self) -> Option<f64> {
        match self {
            ThresholdOutcome::Found(e) => Some(e.d_crit),
            ThresholdOutcome::NoThreshold { .. } => None,
        }
    }
}

/// Scan data for one outcome: realized distance per point and the
/// per-replication outcome values at that point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSeries {
    pub d: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub outcome_name: String,
}

impl ScanSeries {
    pub fn from_scan(scan: &ScanResult, outcome: &str) -> Result<Self> {
        let d = scan.d_repr();
        let values = scan.points.iter().map(|p| p.values(outcome)).collect::<Result<Vec<_>>>()?;
        Ok(ScanSeries { d, values, outcome_name: outcome.to_string() })
    }

    fn means(&self) -> (Vec<f64>, Vec<f64>) {
        self.d
            .iter()
            .zip(&self.values)
            .filter(|(d, v)| d.is_finite() && !v.is_empty())
            .map(|(d, v)| (*d, stats::mean(v)))
            .unzip()
    }
}

/// Minimum number of scan points.
pub const MIN_POINTS: usize = 8;

/// Estimates the threshold with one method. `event_multiple` sets the event
/// level for the crossing rule relative to the widest-dispersion point.
pub fn estimate_threshold(series: &ScanSeries, method: ThresholdMethod, event_multiple: f64) -> Result<ThresholdOutcome> {
    let (x, y) = series.means();
    if x.len() < MIN_POINTS {
        return Err(Error::data(format!("threshold estimation needs at least {MIN_POINTS} scan points, got {}", x.len())));
    }
    let name = series.outcome_name.clone();
    let none = |reason: String| Ok(ThresholdOutcome::NoThreshold { method, outcome_name: name.clone(), reason });
    let found = |d_crit: f64, fit_quality: f64| {
        Ok(ThresholdOutcome::Found(ThresholdEstimate { method, d_crit, fit_quality, outcome_name: name.clone() }))
    };
    let (lo, hi) = min_max(&x);
    match method {
        ThresholdMethod::Segmented => {
            let s = segmented_fit(&x, &y);
            if s.improvement < MIN_IMPROVEMENT {
                return none(format!("hinge improves SSE by {:.4}, below {MIN_IMPROVEMENT}", s.improvement));
            }
            found(s.breakpoint, s.r2)
        }
        ThresholdMethod::SplineCurvature => {
            let s = SmoothingSpline::fit_gcv(&x, &y)?;
            let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            let (i, g) = s.gamma.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0))).expect("knots");
            if g.abs() * (hi - lo).powi(2) < 1e-8 * scale {
                return none("smoothed curve has no curvature".into());
            }
            found(s.x[i], s.gcv)
        }
        ThresholdMethod::EventCrossing => {
            let widest = x.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).expect("points");
            let idx: Vec<usize> = (0..series.d.len()).filter(|&i| series.d[i].is_finite() && !series.values[i].is_empty()).collect();
            let level = event_multiple * y[widest];
            let p: Vec<f64> = idx
                .iter()
                .map(|&i| series.values[i].iter().filter(|v| **v > level).count() as f64 / series.values[i].len() as f64)
                .collect();
            let s = SmoothingSpline::fit_gcv(&x, &p)?;
            match crossing_from_wide(&s, lo, hi) {
                Some(d) => found(d, s.gcv),
                None => none(format!("event probability never crosses 0.5 (event: {} > {level})", series.outcome_name)),
            }
        }
    }
}

/// Walks from the widest point toward homogeneity and returns the first
/// distance where smoothed probability reaches 0.5.
fn crossing_from_wide(s: &SmoothingSpline, lo: f64, hi: f64) -> Option<f64> {
    let n = 2000;
    let at = |i: usize| hi - (hi - lo) * i as f64 / n as f64;
    let mut prev = s.eval(hi);
    if prev >= 0.5 {
        return None;
    }
    for i in 1..=n {
        let d = at(i);
        let p = s.eval(d);
        if p >= 0.5 {
            let d_prev = at(i - 1);
            let w = (0.5 - prev) / (p - prev);
            return Some(d_prev + w * (d - d_prev));
        }
        prev = p;
    }
    None
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentedFit {
    pub breakpoint: f64,
    /// `[intercept, slope, slope change]` of `a + b x + c (x - tau)_+`.
    pub coef: [f64; 3],
    pub sse: f64,
    pub sse_line: f64,
    pub improvement: f64,
    pub r2: f64,
}

/// Continuous two-piece least squares with a grid-searched breakpoint.
pub fn segmented_fit(x: &[f64], y: &[f64]) -> SegmentedFit {
    let mut sx: Vec<f64> = x.to_vec();
    sx.sort_by(f64::total_cmp);
    sx.dedup();
    let ybar = stats::mean(y);
    let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let (a, b) = stats::ols(x, y).unwrap_or((ybar, 0.0));
    let sse_line: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    let mut best = SegmentedFit {
        breakpoint: f64::NAN,
        coef: [a, b, 0.0],
        sse: sse_line,
        sse_line,
        improvement: 0.0,
        r2: if sst > 0.0 { 1.0 - sse_line / sst } else { 1.0 },
    };
    if sx.len() < 4 {
        return best;
    }
    // Interior range keeps at least two distinct abscissae on each side.
    let (lo, hi) = (sx[1], sx[sx.len() - 2]);
    for g in 0..=BREAK_GRID {
        let tau = lo + (hi - lo) * g as f64 / BREAK_GRID as f64;
        let mut xtx = Matrix3::zeros();
        let mut xty = Vector3::zeros();
        for (xi, yi) in x.iter().zip(y) {
            let r = Vector3::new(1.0, *xi, (xi - tau).max(0.0));
            xtx += r * r.transpose();
            xty += r * *yi;
        }
        let Some(c) = xtx.lu().solve(&xty) else { continue };
        let sse: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| (yi - c[0] - c[1] * xi - c[2] * (xi - tau).max(0.0)).powi(2))
            .sum();
        if sse < best.sse || best.breakpoint.is_nan() {
            best.breakpoint = tau;
            best.coef = [c[0], c[1], c[2]];
            best.sse = sse;
        }
    }
    // A line that fits to rounding has nothing to improve on.
    best.improvement = if sse_line > 1e-20 * sst && sse_line > 0.0 { 1.0 - best.sse / sse_line } else { 0.0 };
    best.r2 = if sst > 0.0 { 1.0 - best.sse / sst } else { 1.0 };
    best
}

pub fn thresholds_table(results: &[ThresholdOutcome]) -> Table {
    let mut t = Table::new(&["outcome", "method", "status", "d_crit", "fit_quality", "note"]);
    for r in results {
        match r {
            ThresholdOutcome::Found(e) => t.rows.push(vec![
                e.outcome_name.clone(),
                e.method.name().into(),
                "found".into(),
                fmt_f64(e.d_crit),
                fmt_f64(e.fit_quality),
                String::new(),
            ]),
            ThresholdOutcome::NoThreshold { method, outcome_name, reason } => t.rows.push(vec![
                outcome_name.clone(),
                method.name().into(),
                "no_threshold".into(),
                "NaN".into(),
                "NaN".into(),
                reason.clone(),
            ]),
        }
    }
    t
}

/// Spread of found estimates across outcomes for one method: `(min, max)`.
pub fn clustering(results: &[ThresholdOutcome], method: ThresholdMethod) -> Option<(f64, f64)> {
    let v: Vec<f64> = results
        .iter()
        .filter_map(|r| match r {
            ThresholdOutcome::Found(e) if e.method == method => Some(e.d_crit),
            _ => None,
        })
        .collect();
    if v.is_empty() {
        None
    } else {
        Some(min_max(&v))
    }
}

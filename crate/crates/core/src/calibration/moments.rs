//! The eight calibration moments.
//!
//! Tail moments condition on the public volatility signal agents saw before
//! trading: a period belongs to the top-q subsample when that signal is at or
//! above its `1 - q` quantile in the same sample. Lag-1 autocorrelations are
//! Pearson correlations of consecutive pairs inside one replication, gated on
//! the later period. When several replications are pooled, pairs never span a
//! replication boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Smallest tail subsample a conditional moment is computed from.
pub const MIN_TAIL_OBS: usize = 30;
/// Smallest post-burn-in sample accepted.
pub const MIN_OBS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentVector {
    pub ann_vol: f64,
    pub impact_uncond: f64,
    pub impact_top5: f64,
    pub impact_top1: f64,
    pub acf1: f64,
    pub acf1_top5: f64,
    pub acf1_top1: f64,
    pub flow_acf1: f64,
}

impl MomentVector {
    pub const NAMES: [&'static str; 8] =
        ["ann_vol", "impact_uncond", "impact_top5", "impact_top1", "acf1", "acf1_top5", "acf1_top1", "flow_acf1"];

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.ann_vol,
            self.impact_uncond,
            self.impact_top5,
            self.impact_top1,
            self.acf1,
            self.acf1_top5,
            self.acf1_top1,
            self.flow_acf1,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        MomentVector {
            ann_vol: a[0],
            impact_uncond: a[1],
            impact_top5: a[2],
            impact_top1: a[3],
            acf1: a[4],
            acf1_top5: a[5],
            acf1_top1: a[6],
            flow_acf1: a[7],
        }
    }
}

/// Moments with a per-component reliability flag. Unreliable components are
/// NaN and excluded from any objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub values: MomentVector,
    pub reliable: [bool; 8],
}

/// One replication's aligned series.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    pub returns: &'a [f64],
    pub flows: &'a [f64],
    pub vols: &'a [f64],
}

pub fn compute_moments(returns: &[f64], flows: &[f64], vols: &[f64], periods_per_year: f64) -> Result<MomentEstimate> {
    compute_moments_pooled(&[Segment { returns, flows, vols }], periods_per_year)
}

pub fn compute_moments_pooled(segments: &[Segment<'_>], periods_per_year: f64) -> Result<MomentEstimate> {
    let mut n = 0;
    for s in segments {
        if s.returns.len() != s.flows.len() || s.returns.len() != s.vols.len() {
            return Err(Error::data("returns, flows and volatility series must be aligned"));
        }
        n += s.returns.len();
    }
    if n < MIN_OBS {
        return Err(Error::data(format!("moments need at least {MIN_OBS} observations, got {n}")));
    }
    let all_r: Vec<f64> = segments.iter().flat_map(|s| s.returns.iter().copied()).collect();
    let all_q: Vec<f64> = segments.iter().flat_map(|s| s.flows.iter().copied()).collect();
    let all_v: Vec<f64> = segments.iter().flat_map(|s| s.vols.iter().copied()).collect();
    let mut sorted_v = all_v.clone();
    sorted_v.sort_by(f64::total_cmp);
    let cut5 = stats::quantile_sorted(&sorted_v, 0.95);
    let cut1 = stats::quantile_sorted(&sorted_v, 0.99);

    let mut out = [f64::NAN; 8];
    let mut ok = [false; 8];
    let mut set = |k: usize, v: Option<f64>| {
        if let Some(x) = v.filter(|x| x.is_finite()) {
            out[k] = x;
            ok[k] = true;
        }
    };

    set(0, Some(stats::sd(&all_r) * periods_per_year.sqrt()));
    set(1, stats::ols(&all_q, &all_r).map(|(_, b)| b));
    for (k, cut) in [(2, cut5), (3, cut1)] {
        let (x, y): (Vec<f64>, Vec<f64>) =
            all_q.iter().zip(&all_r).zip(&all_v).filter(|(_, v)| **v >= cut).map(|((q, r), _)| (*q, *r)).unzip();
        if x.len() >= MIN_TAIL_OBS {
            set(k, stats::ols(&x, &y).map(|(_, b)| b));
        }
    }
    set(4, lag_pairs_corr(segments, |s| s.returns, |_| true));
    for (k, cut) in [(5, cut5), (6, cut1)] {
        let count = all_v.iter().filter(|v| **v >= cut).count();
        if count >= MIN_TAIL_OBS {
            set(k, lag_pairs_corr(segments, |s| s.returns, |v| v >= cut));
        }
    }
    set(7, lag_pairs_corr(segments, |s| s.flows, |_| true));

    Ok(MomentEstimate { values: MomentVector::from_array(out), reliable: ok })
}

fn lag_pairs_corr<'a>(segments: &[Segment<'a>], series: impl Fn(&Segment<'a>) -> &'a [f64], gate: impl Fn(f64) -> bool) -> Option<f64> {
    let mut prev = Vec::new();
    let mut next = Vec::new();
    for s in segments {
        let x = series(s);
        for t in 1..x.len() {
            if gate(s.vols[t]) {
                prev.push(x[t - 1]);
                next.push(x[t]);
            }
        }
    }
    stats::pearson(&prev, &next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn degenerate_flows_flagged() {
        let mut rng = seeded_rng(1, 0);
        let r: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let q = vec![0.0; 5000];
        let v: Vec<f64> = (0..5000).map(|t| t as f64).collect();
        let m = compute_moments(&r, &q, &v, 1.0).unwrap();
        assert!(!m.reliable[1] && !m.reliable[7]);
        assert!(m.values.flow_acf1.is_nan());
        assert!(m.reliable[0] && m.reliable[4]);
    }

    #[test]
    fn ols_slope_recovery() {
        // Oracle: OLS is consistent for the planted slope.
        let mut rng = seeded_rng(2, 0);
        let q: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r: Vec<f64> = q
            .iter()
            .map(|x| {
                let e: f64 = StandardNormal.sample(&mut rng);
                0.5 * x + 0.01 * e
            })
            .collect();
        let v: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = compute_moments(&r, &q, &v, 1.0).unwrap();
        assert!((m.values.impact_uncond - 0.5).abs() < 0.01);
        assert!((m.values.impact_top5 - 0.5).abs() < 0.01);
        assert!((m.values.impact_top1 - 0.5).abs() < 0.02);
    }

    #[test]
    fn ar1_autocorrelation() {
        // Oracle: lag-1 autocorrelation of a stationary AR(1) equals its coefficient.
        let mut rng = seeded_rng(3, 0);
        let mut r = vec![0.0f64; 100_000];
        for t in 1..r.len() {
            let e: f64 = StandardNormal.sample(&mut rng);
            r[t] = 0.3 * r[t - 1] + e;
        }
        let q: Vec<f64> = (0..r.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v = vec![1.0; r.len()];
        let m = compute_moments(&r, &q, &v, 1.0).unwrap();
        assert!((m.values.acf1 - 0.3).abs() < 0.02);
        assert!(m.values.flow_acf1.abs() < 0.02);
    }

    #[test]
    fn small_tail_subsample_flagged_and_short_sample_rejected() {
        let r: Vec<f64> = (0..1500).map(|t| ((t * 7919) % 13) as f64).collect();
        let q: Vec<f64> = (0..1500).map(|t| ((t * 31) % 7) as f64).collect();
        let v: Vec<f64> = (0..1500).map(|t| t as f64).collect();
        let m = compute_moments(&r, &q, &v, 1.0).unwrap();
        // Top 1% of 1500 is 15 periods.
        assert!(!m.reliable[3] && !m.reliable[6]);
        assert!(m.reliable[2] && m.reliable[5]);
        assert!(compute_moments(&r[..500], &q[..500], &v[..500], 1.0).is_err());
    }

    #[test]
    fn pooled_pairs_do_not_cross_segments() {
        let a = vec![1.0; 600];
        let b = vec![-1.0; 600];
        let mut r1: Vec<f64> = (0..600).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        r1[0] = 5.0;
        let segs = [
            Segment { returns: &r1, flows: &a, vols: &a },
            Segment { returns: &r1, flows: &b, vols: &a },
        ];
        let m = compute_moments_pooled(&segs, 1.0).unwrap();
        assert!(m.values.acf1 < -0.9);
    }
}

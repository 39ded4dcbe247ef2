//! Cubic smoothing spline (Reinsch form) with GCV-selected smoothing.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSpline {
    pub x: Vec<f64>,
    /// Fitted values at the knots.
    pub g: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends).
    pub gamma: Vec<f64>,
    pub lambda: f64,
    pub gcv: f64,
}

struct Penalty {
    q: DMatrix<f64>,
    qtq: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn penalty(x: &[f64]) -> Result<Penalty> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    if h.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::data("spline knots must be strictly increasing"));
    }
    let m = n - 2;
    let mut q = DMatrix::zeros(n, m);
    let mut r = DMatrix::zeros(m, m);
    for j in 0..m {
        q[(j, j)] = 1.0 / h[j];
        q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
        q[(j + 2, j)] = 1.0 / h[j + 1];
        r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
        if j + 1 < m {
            r[(j, j + 1)] = h[j + 1] / 6.0;
            r[(j + 1, j)] = h[j + 1] / 6.0;
        }
    }
    let qtq = q.transpose() * &q;
    Ok(Penalty { q, qtq, r })
}

struct Fit {
    g: DVector<f64>,
    /// Second derivatives at the interior knots.
    gamma: DVector<f64>,
    rss: f64,
    /// Trace of the hat matrix.
    tr: f64,
}

/// Solves `(R + lambda Q'Q) gamma = Q'y`, `g = y - lambda Q gamma`.
fn fit_at(y: &DVector<f64>, p: &Penalty, lambda: f64) -> Result<Fit> {
    let n = y.len();
    let chol = (&p.r + &p.qtq * lambda).cholesky().ok_or_else(|| Error::data("singular smoothing system"))?;
    let gamma = chol.solve(&(p.q.transpose() * y));
    let g = y - &p.q * &gamma * lambda;
    let rss = (y - &g).norm_squared();
    let tr = n as f64 - lambda * (chol.inverse() * &p.qtq).trace();
    Ok(Fit { g, gamma, rss, tr })
}

impl SmoothingSpline {
    /// Fits with the smoothing parameter minimising generalised
    /// cross-validation over a log grid.
    pub fn fit_gcv(x: &[f64], y: &[f64]) -> Result<Self> {
        let (x, y) = merge_ties(x, y)?;
        let n = x.len();
        if n < 4 {
            return Err(Error::data("smoothing spline needs at least 4 distinct knots"));
        }
        let p = penalty(&x)?;
        let yv = DVector::from_column_slice(&y);
        let span = x[n - 1] - x[0];
        let mut best: Option<(f64, f64)> = None;
        for i in 0..=160 {
            let lambda = span.powi(3) * 10f64.powf(-10.0 + i as f64 * 0.1);
            let Fit { rss, tr, .. } = fit_at(&yv, &p, lambda)?;
            let denom = n as f64 - tr;
            if denom <= 1e-9 {
                continue;
            }
            let gcv = n as f64 * rss / (denom * denom);
            if best.is_none_or(|(_, b)| gcv < b) {
                best = Some((lambda, gcv));
            }
        }
        let (lambda, gcv) = best.ok_or_else(|| Error::data("no admissible smoothing parameter"))?;
        Self::build(x, &yv, &p, lambda, gcv)
    }

    pub fn fit(x: &[f64], y: &[f64], lambda: f64) -> Result<Self> {
        let (x, y) = merge_ties(x, y)?;
        if x.len() < 3 {
            return Err(Error::data("smoothing spline needs at least 3 distinct knots"));
        }
        let p = penalty(&x)?;
        let yv = DVector::from_column_slice(&y);
        Self::build(x, &yv, &p, lambda, f64::NAN)
    }

    fn build(x: Vec<f64>, y: &DVector<f64>, p: &Penalty, lambda: f64, gcv: f64) -> Result<Self> {
        let f = fit_at(y, p, lambda)?;
        let mut gamma = vec![0.0; x.len()];
        gamma[1..x.len() - 1].copy_from_slice(f.gamma.as_slice());
        Ok(SmoothingSpline { x, g: f.g.as_slice().to_vec(), gamma, lambda, gcv })
    }

    /// Value at `t`; linear beyond the end knots.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.g[0] + self.slope_at_end(0) * (t - self.x[0]);
        }
        if t >= self.x[n - 1] {
            return self.g[n - 1] + self.slope_at_end(n - 1) * (t - self.x[n - 1]);
        }
        let i = self.x.partition_point(|v| *v <= t) - 1;
        let (xl, xr) = (self.x[i], self.x[i + 1]);
        let h = xr - xl;
        let (a, b) = (t - xl, xr - t);
        (a * self.g[i + 1] + b * self.g[i]) / h
            - a * b / 6.0 * ((1.0 + a / h) * self.gamma[i + 1] + (1.0 + b / h) * self.gamma[i])
    }

    fn slope_at_end(&self, i: usize) -> f64 {
        let n = self.x.len();
        if i == 0 {
            let h = self.x[1] - self.x[0];
            (self.g[1] - self.g[0]) / h - h * self.gamma[1] / 6.0
        } else {
            let h = self.x[n - 1] - self.x[n - 2];
            (self.g[n - 1] - self.g[n - 2]) / h + h * self.gamma[n - 2] / 6.0
        }
    }
}

/// Sorts by `x` and averages `y` over repeated abscissae.
fn merge_ties(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(Error::data("spline inputs must have equal length"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::data("spline inputs must be finite"));
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let (mut xs, mut ys, mut cnt): (Vec<f64>, Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new(), Vec::new());
    for i in idx {
        if xs.last() == Some(&x[i]) {
            *ys.last_mut().expect("nonempty") += y[i];
            *cnt.last_mut().expect("nonempty") += 1.0;
        } else {
            xs.push(x[i]);
            ys.push(y[i]);
            cnt.push(1.0);
        }
    }
    for (v, c) in ys.iter_mut().zip(&cnt) {
        *v /= c;
    }
    Ok((xs, ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_is_a_fixed_point() {
        let x: Vec<f64> = (0..12).map(|i| (i as f64).powf(1.3)).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.7 * v).collect();
        let s = SmoothingSpline::fit(&x, &y, 5.0).unwrap();
        for (a, b) in s.g.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(s.gamma.iter().all(|g| g.abs() < 1e-9));
        assert!((s.eval(3.3) - (2.0 - 0.7 * 3.3)).abs() < 1e-9);
    }

    #[test]
    fn tiny_lambda_interpolates_and_eval_hits_knots() {
        let x = [0.0, 0.5, 1.2, 2.0, 3.1, 4.0];
        let y = [1.0, -1.0, 0.5, 2.0, 0.0, 1.0];
        let s = SmoothingSpline::fit(&x, &y, 1e-12).unwrap();
        for (i, v) in y.iter().enumerate() {
            assert!((s.g[i] - v).abs() < 1e-8);
            assert!((s.eval(x[i]) - s.g[i]).abs() < 1e-12);
        }
        // Continuity of the piecewise formula across a knot.
        assert!((s.eval(1.2 - 1e-9) - s.eval(1.2 + 1e-9)).abs() < 1e-6);
    }

    #[test]
    fn huge_lambda_gives_least_squares_line() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [0.0, 2.0, 1.0, 3.0, 5.0];
        let s = SmoothingSpline::fit(&x, &y, 1e12).unwrap();
        let (a, b) = crate::stats::ols(&x, &y).unwrap();
        for (xi, gi) in x.iter().zip(&s.g) {
            assert!((gi - (a + b * xi)).abs() < 1e-6, "{gi} vs {}", a + b * xi);
        }
    }

    #[test]
    fn natural_spline_second_derivative_matches_finite_difference() {
        let x = [0.0, 0.3, 0.9, 1.4, 2.0, 2.2, 3.0];
        let y = [0.1, 0.5, -0.2, 0.3, 0.9, 0.4, 0.0];
        let s = SmoothingSpline::fit(&x, &y, 0.01).unwrap();
        let h = 1e-4;
        for i in 1..x.len() - 1 {
            let t = x[i] + 0.3 * (x[i + 1] - x[i]);
            let fd = (s.eval(t + h) - 2.0 * s.eval(t) + s.eval(t - h)) / (h * h);
            let lin = s.gamma[i] + 0.3 * (s.gamma[i + 1] - s.gamma[i]);
            assert!((fd - lin).abs() < 1e-3 * (1.0 + lin.abs()), "{fd} vs {lin}");
        }
    }

    #[test]
    fn ties_are_averaged() {
        let s = SmoothingSpline::fit(&[0.0, 1.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 3.0, 4.0, 6.0], 1e-12).unwrap();
        assert_eq!(s.x, vec![0.0, 1.0, 2.0, 3.0]);
        assert!((s.g[1] - 2.0).abs() < 1e-8);
    }
}

//! Nelder-Mead simplex search on the unit cube with reflection at the faces.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmOptions {
    pub max_evals: usize,
    /// Initial simplex edge in unit coordinates.
    pub step: f64,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// Stop when every vertex is within this distance of the best one.
    pub x_tol: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        NmOptions { max_evals: 300, step: 0.05, f_tol: 1e-8, x_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    /// Every evaluated point with its value, in evaluation order.
    pub trace: Vec<(Vec<f64>, f64)>,
}

/// Folds a coordinate back into `[0, 1]` by mirror reflection.
pub fn reflect_unit(x: f64) -> f64 {
    if !x.is_finite() {
        return 0.5;
    }
    let m = x.rem_euclid(2.0);
    if m > 1.0 {
        2.0 - m
    } else {
        m
    }
}

/// Minimizes `f` from `x0`; non-finite values are treated as `+inf`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &NmOptions) -> NmResult {
    let n = x0.len();
    let mut trace = Vec::new();
    let mut eval = |x: &[f64], trace: &mut Vec<(Vec<f64>, f64)>| -> f64 {
        let v = f(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        trace.push((x.to_vec(), v));
        v
    };
    let start: Vec<f64> = x0.iter().map(|&v| reflect_unit(v)).collect();
    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        v[i] = if v[i] + opts.step <= 1.0 { v[i] + opts.step } else { v[i] - opts.step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    for v in &simplex {
        if trace.len() >= opts.max_evals.max(1) {
            values.push(f64::INFINITY);
        } else {
            values.push(eval(v, &mut trace));
        }
    }
    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| reflect_unit(x + t * (y - x))).collect()
    };
    while trace.len() < opts.max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let (best, worst) = (values[0], values[n]);
        let spread = if best.is_finite() && worst.is_finite() { worst - best } else { f64::INFINITY };
        let size = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if n == 0 || (spread <= opts.f_tol && size <= opts.x_tol) || size == 0.0 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|d| simplex[..n].iter().map(|v| v[d]).sum::<f64>() / n as f64).collect();
        let xr = combine(&centroid, &simplex[n], -1.0);
        let fr = eval(&xr, &mut trace);
        if fr < values[0] {
            let xe = combine(&centroid, &simplex[n], -2.0);
            let fe = if trace.len() < opts.max_evals { eval(&xe, &mut trace) } else { f64::INFINITY };
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        // Outside contraction toward the reflected point, inside otherwise.
        let toward = if fr < values[n] { xr } else { simplex[n].clone() };
        let xc = combine(&centroid, &toward, 0.5);
        let fc = eval(&xc, &mut trace);
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            if trace.len() >= opts.max_evals {
                break;
            }
            simplex[i] = combine(&simplex[0], &simplex[i], 0.5);
            values[i] = eval(&simplex[i], &mut trace);
        }
    }
    let (best_x, best_f) = trace
        .iter()
        .fold((start, f64::INFINITY), |acc, (x, v)| if *v < acc.1 { (x.clone(), *v) } else { acc });
    NmResult { x: best_x, f: best_f, evals: trace.len(), trace }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection() {
        assert_eq!(reflect_unit(0.3), 0.3);
        assert!((reflect_unit(-0.2) - 0.2).abs() < 1e-15);
        assert!((reflect_unit(1.25) - 0.75).abs() < 1e-15);
        assert!((reflect_unit(2.1) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn finds_interior_quadratic_minimum() {
        let target = [0.3, 0.7, 0.55];
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2) * 10.0).sum::<f64>();
        let r = minimize(f, &[0.5, 0.5, 0.5], &NmOptions { max_evals: 2000, ..Default::default() });
        for (a, b) in r.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-3, "{:?}", r.x);
        }
        assert!(r.evals <= 2000);
    }

    #[test]
    fn respects_box_and_rosenbrock() {
        // Rosenbrock on [0,1]^2 scaled so the minimum (1,1) sits in a corner.
        let f = |x: &[f64]| {
            let (a, b) = (2.0 * x[0] - 0.0, 2.0 * x[1]);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let r = minimize(f, &[0.1, 0.9], &NmOptions { max_evals: 3000, ..Default::default() });
        assert!(r.x.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(r.f < 1e-4, "{}", r.f);
    }

    #[test]
    fn never_worse_than_start_and_budget_respected() {
        let f = |x: &[f64]| (x[0] - 0.2).abs();
        let start = [0.9];
        let f0 = f(&start);
        let r = minimize(f, &start, &NmOptions { max_evals: 7, ..Default::default() });
        assert!(r.f <= f0);
        assert!(r.evals <= 7);
    }
}

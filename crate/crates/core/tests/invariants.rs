use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use repmarket::agents::choose_position;
use repmarket::calibration::sobol::Sobol;
use repmarket::engine::{liquidity_coefs, price_step, LiquidityMode};
use repmarket::experiments::{factorial_regression, FactorialCell};
use repmarket::metrics::{assignment, concentration, max_drawdown};
use repmarket::table::{fmt_f64, Table};
use repmarket::{AgentParams, AgentState, DealerState, PricingParams};

fn pricing() -> impl Strategy<Value = PricingParams> {
    (1e-4..0.1f64, 0.0..5.0f64, 1e-3..1.0f64, 1e-4..0.1f64, 0.0..5.0f64, 1e-3..1.0f64).prop_map(|(l, al, bl, p, ap, bp)| {
        PricingParams { lambda0: l, alpha_lambda: al, beta_lambda: bl, psi0: p, alpha_psi: ap, beta_psi: bp, kappa: 0.2, sigma_eps: 0.1 }
    })
}

proptest! {
    #[test]
    fn liquidity_rises_with_inventory_and_saturates(pp in pricing(), a in 0.0..50.0f64, b in 0.0..50.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (l1, p1) = liquidity_coefs(lo, &pp);
        let (l2, p2) = liquidity_coefs(-hi, &pp);
        prop_assert!(l1 <= l2 + 1e-15 && p1 <= p2 + 1e-15);
        prop_assert!(l1 >= pp.lambda0 && p1 >= pp.psi0);
        let cap_l = pp.lambda0 * (1.0 + pp.alpha_lambda / pp.beta_lambda);
        let cap_p = pp.psi0 * (1.0 + pp.alpha_psi / pp.beta_psi);
        prop_assert!(l2 <= cap_l * (1.0 + 1e-12) && p2 <= cap_p * (1.0 + 1e-12));
        let (li, pi) = liquidity_coefs(f64::INFINITY, &pp);
        prop_assert!((li - cap_l).abs() <= 1e-12 * cap_l && (pi - cap_p).abs() <= 1e-12 * cap_p);
    }

    #[test]
    fn price_step_conserves_inventory(pp in pricing(), inv in -20.0..20.0f64, flow in -5.0..5.0f64, shock in -1.0..1.0f64) {
        let dealer = DealerState { inventory: inv, ..DealerState::initial(100.0, &pp) };
        let (next, rec) = price_step(&dealer, flow, shock, &pp, LiquidityMode::Inventory, 0).unwrap();
        prop_assert_eq!(next.inventory, inv - flow);
        prop_assert_eq!(next.fundamental, dealer.fundamental + shock);
        let (l, p) = liquidity_coefs(inv, &pp);
        prop_assert!((rec.price - (next.fundamental + l * flow - p * next.inventory)).abs() < 1e-12);
        let (_, c) = price_step(&dealer, flow, shock, &pp, LiquidityMode::Constant, 0).unwrap();
        prop_assert_eq!((c.lambda_coef, c.psi_coef), (pp.lambda0, pp.psi0));
    }

    #[test]
    fn position_respects_cap_and_first_order_condition(
        r_hat in -1.0..1.0f64, sigma2 in 1e-6..0.1f64, gamma in 0.1..10.0f64,
        kappa in 0.01..1.0f64, lam in 0.0..1.0f64, prev in -4.0..4.0f64, d_max in 0.5..5.0f64,
    ) {
        let mut st = AgentState::new(DMatrix::zeros(1, 1), DVector::zeros(1));
        st.position = prev;
        st.lambda_hat = lam;
        let params = AgentParams { gamma, eta_theta: 0.01, d_max, rho: 0.05, eps_reg: 0.5 };
        let c = choose_position(&st, &params, r_hat, sigma2, kappa);
        prop_assert!(c.position.abs() <= d_max);
        prop_assert!((c.trade - (c.position - prev)).abs() < 1e-12);
        let foc = r_hat - gamma * sigma2 * c.target - (kappa + lam) * (c.target - prev);
        prop_assert!(foc.abs() < 1e-9 * (1.0 + c.target.abs()));
        if c.target.abs() <= d_max {
            prop_assert_eq!(c.position, c.target);
        }
    }

    #[test]
    fn assignment_matches_brute_force(n in 1usize..6, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cost: Vec<f64> = (0..n * n).map(|_| r.random_range(0.0..10.0)).collect();
        let (perm, total) = assignment::solve(&cost, n);
        let best = (0..n).permutations(n).map(|p| p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>()).fold(f64::INFINITY, f64::min);
        prop_assert!((total - best).abs() < 1e-9);
        prop_assert_eq!(perm.iter().copied().sorted().collect::<Vec<_>>(), (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn factorial_fit_reproduces_cell_means(means in prop::array::uniform8(-5.0..5.0f64), spread in 0.0..1.0f64) {
        let y: [Vec<f64>; 8] = std::array::from_fn(|c| vec![means[c] - spread, means[c] + spread, means[c]]);
        let est = factorial_regression(&y).unwrap();
        for cell in FactorialCell::all() {
            prop_assert!((est.fitted(cell) - means[cell.index()]).abs() < 1e-9);
        }
    }

    #[test]
    fn table_round_trips_floats(xs in prop::collection::vec(any::<f64>(), 1..40)) {
        let mut t = Table::new(&["k", "x"]);
        for (i, x) in xs.iter().enumerate() {
            t.push(vec![i.to_string(), fmt_f64(*x)]).unwrap();
        }
        let back = Table::read_from(t.to_string_tsv().unwrap().as_bytes()).unwrap();
        let ys = back.column_f64("x").unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
        }
    }

    #[test]
    fn concentration_lies_in_unit_interval(trades in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 20), 2..8)) {
        let c = concentration(&trades, 0);
        for v in c.per_step.iter().flatten() {
            prop_assert!((0.0..=1.0 + 1e-12).contains(v));
        }
    }

    #[test]
    fn drawdown_is_nonnegative_and_bounded(prices in prop::collection::vec(1.0..200.0f64, 2..100)) {
        let d = max_drawdown(&prices);
        let range = prices.iter().cloned().fold(f64::MIN, f64::max) - prices.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!(d >= 0.0 && d <= range + 1e-12);
    }
}

#[test]
fn sobol_points_fill_the_unit_cube() {
    let pts = Sobol::new(8).take_points(1024);
    assert!(pts.iter().flatten().all(|x| (0.0..1.0).contains(x)));
    // Each coordinate of the first 2^m points hits every dyadic interval once.
    for d in 0..8 {
        let mut bins = vec![0; 16];
        for p in &pts[..16] {
            bins[(p[d] * 16.0) as usize] += 1;
        }
        assert!(bins.iter().all(|&b| b == 1), "dimension {d}: {bins:?}");
    }
}

//! Reduced-form pricing block.
//!
//! The fundamental follows a random walk, the dealer absorbs net order flow
//! into inventory, and the transaction price is the fundamental plus a flow
//! impact term minus an inventory premium. Both liquidity coefficients rise
//! with squared lagged inventory and saturate at a finite bound.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{DealerState, PricingParams};

/// `(lambda_t, psi_t)` from the dealer inventory carried into the period.
pub fn liquidity_coefs(prev_inventory: f64, pricing: &PricingParams) -> (f64, f64) {
    let i2 = prev_inventory * prev_inventory;
    let lambda = pricing.lambda0 * (1.0 + saturating(pricing.alpha_lambda, pricing.beta_lambda, i2));
    let psi = pricing.psi0 * (1.0 + saturating(pricing.alpha_psi, pricing.beta_psi, i2));
    (lambda, psi)
}

// a*x/(1+b*x), written to stay finite as x -> inf.
fn saturating(a: f64, b: f64, x: f64) -> f64 {
    if x.is_infinite() {
        a / b
    } else {
        a * x / (1.0 + b * x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiquidityMode {
    /// Coefficients respond to lagged inventory.
    #[default]
    Inventory,
    /// Coefficients frozen at their baselines.
    Constant,
}

/// Record of one priced period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub price: f64,
    /// `price - previous price`.
    pub ret: f64,
    pub flow: f64,
    pub inventory: f64,
    pub lambda_coef: f64,
    pub psi_coef: f64,
}

/// Absorbs one period of net flow and forms the end-of-period price.
///
/// The liquidity coefficients are computed from the inventory the dealer
/// carries into the period, before this period's flow is absorbed.
pub fn price_step(
    dealer: &DealerState,
    flow: f64,
    shock: f64,
    pricing: &PricingParams,
    mode: LiquidityMode,
    step: usize,
) -> Result<(DealerState, StepResult)> {
    if !flow.is_finite() || !shock.is_finite() {
        return Err(Error::Numeric { step, what: format!("non-finite input (flow {flow}, shock {shock})") });
    }
    let (lambda, psi) = match mode {
        LiquidityMode::Inventory => liquidity_coefs(dealer.inventory, pricing),
        LiquidityMode::Constant => (pricing.lambda0, pricing.psi0),
    };
    let fundamental = dealer.fundamental + shock;
    let inventory = dealer.inventory - flow;
    let price = fundamental + lambda * flow - psi * inventory;
    if !price.is_finite() {
        return Err(Error::Numeric { step, what: format!("price became {price}") });
    }
    let next = DealerState { fundamental, inventory, price, lambda_coef: lambda, psi_coef: psi };
    let rec = StepResult { price, ret: price - dealer.price, flow, inventory, lambda_coef: lambda, psi_coef: psi };
    Ok((next, rec))
}

/// Four-term split of a one-period return: news, current flow pressure,
/// reversal of last period's impact, and inventory revaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnDecomposition {
    pub news: f64,
    pub pressure: f64,
    pub reversal: f64,
    pub revaluation: f64,
}

impl ReturnDecomposition {
    /// Decomposes the return from `prev` to `next`, where `shock` is the
    /// fundamental innovation that entered `next`.
    pub fn between(prev: &StepResult, next: &StepResult, shock: f64) -> Self {
        ReturnDecomposition {
            news: shock,
            pressure: (next.lambda_coef + next.psi_coef) * next.flow,
            reversal: -prev.lambda_coef * prev.flow,
            revaluation: -(next.psi_coef - prev.psi_coef) * prev.inventory,
        }
    }

    pub fn total(&self) -> f64 {
        self.news + self.pressure + self.reversal + self.revaluation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockKind {
    #[default]
    Gaussian,
    /// Gaussian diffusion plus Bernoulli-timed symmetric alpha-stable jumps.
    StableJump,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockSpec {
    pub kind: ShockKind,
    pub sigma_eps: f64,
    pub stable_alpha: f64,
    pub stable_scale: f64,
    pub jump_intensity: f64,
}

impl ShockSpec {
    pub fn gaussian(sigma_eps: f64) -> Self {
        ShockSpec { kind: ShockKind::Gaussian, sigma_eps, stable_alpha: 2.0, stable_scale: 1.0, jump_intensity: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_eps >= 0.0) {
            return Err(Error::config(format!("sigma_eps must be nonnegative, got {}", self.sigma_eps)));
        }
        if self.kind == ShockKind::StableJump {
            if !(self.stable_alpha > 0.0 && self.stable_alpha <= 2.0) {
                return Err(Error::config(format!("stable alpha must lie in (0,2], got {}", self.stable_alpha)));
            }
            if !(self.stable_scale > 0.0) || !(0.0..=1.0).contains(&self.jump_intensity) {
                return Err(Error::config("stable scale must be positive and jump intensity in [0,1]"));
            }
        }
        Ok(())
    }
}

/// One fundamental innovation.
///
/// The Gaussian kind consumes exactly one normal draw. The jump kind consumes
/// a normal, a uniform, and two further draws only when a jump arrives.
pub fn draw_shock<R: Rng + ?Sized>(spec: &ShockSpec, rng: &mut R) -> Result<f64> {
    spec.validate()?;
    let z: f64 = StandardNormal.sample(rng);
    let diffusion = spec.sigma_eps * z;
    match spec.kind {
        ShockKind::Gaussian => Ok(diffusion),
        ShockKind::StableJump => {
            let u: f64 = rng.random();
            if u < spec.jump_intensity {
                let jump = SymmetricStable::new(spec.stable_alpha, spec.stable_scale)?.sample(rng);
                Ok(diffusion + jump)
            } else {
                Ok(diffusion)
            }
        }
    }
}

/// Symmetric alpha-stable law sampled by the Chambers-Mallows-Stuck method.
///
/// With `alpha = 2` this is `N(0, 2 * scale^2)`; with `alpha = 1` it is
/// Cauchy with the given scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricStable {
    alpha: f64,
    scale: f64,
}

impl SymmetricStable {
    pub fn new(alpha: f64, scale: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::config(format!("stable alpha must lie in (0,2], got {alpha}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::config(format!("stable scale must be positive, got {scale}")));
        }
        Ok(SymmetricStable { alpha, scale })
    }
}

impl Distribution<f64> for SymmetricStable {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // V uniform on the open interval (-pi/2, pi/2), W standard exponential.
        let mut u: f64 = rng.random();
        while u == 0.0 {
            u = rng.random();
        }
        let v = FRAC_PI_2 * (2.0 * u - 1.0);
        let w: f64 = Exp1.sample(rng);
        let a = self.alpha;
        let x = if (a - 1.0).abs() < 1e-12 {
            v.tan()
        } else {
            let cos_v = v.cos();
            (a * v).sin() / cos_v.powf(1.0 / a) * (((1.0 - a) * v).cos() / w).powf((1.0 - a) / a)
        };
        self.scale * x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn params() -> PricingParams {
        PricingParams {
            lambda0: 1.0,
            alpha_lambda: 2.0,
            beta_lambda: 1.0,
            psi0: 0.5,
            alpha_psi: 1.0,
            beta_psi: 2.0,
            kappa: 0.1,
            sigma_eps: 0.1,
        }
    }

    #[test]
    fn zero_inventory_baseline() {
        let p = params();
        assert_eq!(liquidity_coefs(0.0, &p), (p.lambda0, p.psi0));
    }

    #[test]
    fn coefficient_direct_substitution() {
        let (l, _) = liquidity_coefs(1.0, &params());
        assert!((l - 2.0).abs() < 1e-15);
    }

    #[test]
    fn coefficient_saturation() {
        let p = params();
        let (lmax, pmax) = p.coef_limits();
        let (l, s) = liquidity_coefs(1e9, &p);
        assert!((l - lmax).abs() < 1e-9);
        assert!((s - pmax).abs() < 1e-9);
        let (l, s) = liquidity_coefs(f64::INFINITY, &p);
        assert_eq!((l, s), (lmax, pmax));
        for i in [-50.0, -1.0, 0.3, 7.0] {
            let (l, s) = liquidity_coefs(i, &p);
            assert!(l >= p.lambda0 && l < lmax);
            assert!(s >= p.psi0 && s < pmax);
        }
    }

    #[test]
    fn no_trade_no_news_fixed_point() {
        let p = params();
        let d = DealerState::initial(100.0, &p);
        let (d2, r) = price_step(&d, 0.0, 0.0, &p, LiquidityMode::Inventory, 0).unwrap();
        assert_eq!(d2.price, 100.0);
        assert_eq!(d2.inventory, 0.0);
        assert_eq!(r.ret, 0.0);
    }

    #[test]
    fn price_direct_substitution() {
        let p = PricingParams { lambda0: 0.5, psi0: 0.1, ..params() };
        let d = DealerState::initial(100.0, &p);
        let (d2, r) = price_step(&d, 1.0, 0.0, &p, LiquidityMode::Inventory, 0).unwrap();
        assert_eq!(d2.inventory, -1.0);
        assert!((d2.price - 100.6).abs() < 1e-12);
        assert!((r.ret - 0.6).abs() < 1e-12);
    }

    #[test]
    fn non_finite_flow_is_a_numeric_fault() {
        let p = params();
        let d = DealerState::initial(100.0, &p);
        assert!(matches!(
            price_step(&d, f64::NAN, 0.0, &p, LiquidityMode::Inventory, 3),
            Err(Error::Numeric { step: 3, .. })
        ));
    }

    #[test]
    fn constant_mode_freezes_coefficients() {
        let p = params();
        let mut d = DealerState::initial(100.0, &p);
        for k in 0..50 {
            let (d2, r) = price_step(&d, (k as f64).sin() * 3.0, 0.01, &p, LiquidityMode::Constant, k).unwrap();
            assert_eq!(r.lambda_coef, p.lambda0);
            assert_eq!(r.psi_coef, p.psi0);
            d = d2;
        }
    }

    #[test]
    fn decomposition_matches_price_difference() {
        // Oracle: term-by-term evaluation of the four-term return identity.
        let p = params();
        let mut rng = seeded_rng(5, 0);
        let mut d = DealerState::initial(100.0, &p);
        let mut prev: Option<StepResult> = None;
        for t in 0..1000 {
            let flow: f64 = rng.random_range(-2.0..2.0);
            let eps: f64 = { let z: f64 = StandardNormal.sample(&mut rng); 0.1 * z };
            let (d2, rec) = price_step(&d, flow, eps, &p, LiquidityMode::Inventory, t).unwrap();
            if let Some(pr) = prev {
                let dec = ReturnDecomposition::between(&pr, &rec, eps);
                assert!((dec.total() - (rec.price - pr.price)).abs() < 1e-10);
            }
            prev = Some(rec);
            d = d2;
        }
    }

    #[test]
    fn degenerate_gaussian() {
        let mut rng = seeded_rng(1, 1);
        let spec = ShockSpec::gaussian(0.0);
        for _ in 0..100 {
            assert_eq!(draw_shock(&spec, &mut rng).unwrap(), 0.0);
        }
    }

    #[test]
    fn bad_alpha_rejected() {
        let mut rng = seeded_rng(1, 1);
        let mut spec = ShockSpec::gaussian(0.1);
        spec.kind = ShockKind::StableJump;
        spec.stable_alpha = 2.5;
        assert!(draw_shock(&spec, &mut rng).is_err());
        spec.stable_alpha = 0.0;
        assert!(draw_shock(&spec, &mut rng).is_err());
        assert!(SymmetricStable::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn stable_alpha_two_is_gaussian_with_double_variance() {
        // Oracle: the alpha = 2 law is N(0, 2c^2).
        let c = 0.7;
        let d = SymmetricStable::new(2.0, c).unwrap();
        let mut rng = seeded_rng(11, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((v / (2.0 * c * c) - 1.0).abs() < 0.05, "variance {v}");
    }

    #[test]
    fn stable_is_symmetric() {
        let d = SymmetricStable::new(1.5, 1.0).unwrap();
        let mut rng = seeded_rng(12, 0);
        let n = 200_000;
        let below = (0..n).filter(|_| d.sample(&mut rng) < 0.0).count();
        assert!((below as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn jump_shock_has_heavier_tails() {
        let spec = ShockSpec {
            kind: ShockKind::StableJump,
            sigma_eps: 0.1,
            stable_alpha: 1.5,
            stable_scale: 0.5,
            jump_intensity: 0.05,
        };
        let mut rng = seeded_rng(13, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| draw_shock(&spec, &mut rng).unwrap()).collect();
        let big = xs.iter().filter(|x| x.abs() > 0.6).count();
        // A pure N(0, 0.01) would give essentially zero draws beyond 6 sd.
        assert!(big > 1000, "only {big} large draws");
    }
}

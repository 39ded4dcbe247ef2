//! Shared domain types: the public market state, agent and dealer state,
//! pricing parameters and the public volatility estimator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Publicly observable state `S_t` fed to every agent before trading.
///
/// Layout when flattened: the `L` most recent returns (most recent first),
/// then the realized volatility signal, then last period's net order flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub lagged_returns: Vec<f64>,
    pub realized_vol: f64,
    pub lagged_flow: f64,
}

impl MarketState {
    pub fn zeros(lags: usize) -> Self {
        MarketState { lagged_returns: vec![0.0; lags], realized_vol: 0.0, lagged_flow: 0.0 }
    }

    /// Total dimension `K_s = L + 2`.
    pub fn dim(&self) -> usize {
        self.lagged_returns.len() + 2
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.lagged_returns);
        v.push(self.realized_vol);
        v.push(self.lagged_flow);
        v
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        if s.len() < 3 {
            return Err(Error::config(format!("state vector of length {} is too short", s.len())));
        }
        let l = s.len() - 2;
        Ok(MarketState { lagged_returns: s[..l].to_vec(), realized_vol: s[l], lagged_flow: s[l + 1] })
    }
}

/// Assembles `S_t` from a most-recent-first return history.
pub fn build_state(return_history: &[f64], vol: f64, last_flow: f64, lags: usize) -> Result<MarketState> {
    if lags == 0 {
        return Err(Error::config("number of lags must be positive"));
    }
    if return_history.len() < lags {
        return Err(Error::config(format!(
            "return history has {} entries, need at least {lags}",
            return_history.len()
        )));
    }
    if !(vol >= 0.0) {
        return Err(Error::config(format!("realized volatility must be nonnegative, got {vol}")));
    }
    Ok(MarketState { lagged_returns: return_history[..lags].to_vec(), realized_vol: vol, lagged_flow: last_flow })
}

/// Static agent parameters. `gamma` and `eta_theta` never change after the
/// population is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub gamma: f64,
    pub eta_theta: f64,
    pub d_max: f64,
    pub rho: f64,
    pub eps_reg: f64,
}

impl AgentParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("gamma", self.gamma), ("eta_theta", self.eta_theta), ("d_max", self.d_max), ("eps_reg", self.eps_reg)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("agent parameter {name} must be positive and finite, got {v}")));
            }
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config(format!("slippage weight rho must lie in (0,1), got {}", self.rho)));
        }
        Ok(())
    }
}

/// Dynamic agent state.
///
/// `last_features`, `last_forecast` and `last_lambda_hat` cache the decision
/// made this period so the readout update can pair it with the return that
/// follows.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    /// Representation matrix, `K x K_s`.
    pub w: DMatrix<f64>,
    /// Readout vector, length `K`.
    pub theta: DVector<f64>,
    /// Position held entering the period.
    pub position: f64,
    /// Perceived impact coefficient.
    pub lambda_hat: f64,
    pub last_trade: f64,
    pub last_forecast: f64,
    pub last_features: DVector<f64>,
    /// Slippage estimate that was in force when the cached decision was made.
    pub last_lambda_hat: f64,
    /// True when a decision is cached and still awaiting its realized return.
    pub pending: bool,
}

impl AgentState {
    pub fn new(w: DMatrix<f64>, theta: DVector<f64>) -> Self {
        let k = w.nrows();
        assert_eq!(theta.len(), k, "readout length must equal the number of features");
        AgentState {
            w,
            theta,
            position: 0.0,
            lambda_hat: 0.0,
            last_trade: 0.0,
            last_forecast: 0.0,
            last_features: DVector::zeros(k),
            last_lambda_hat: 0.0,
            pending: false,
        }
    }

    pub fn n_features(&self) -> usize {
        self.w.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.w.ncols()
    }
}

/// Reduced-form dealer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DealerState {
    pub fundamental: f64,
    pub inventory: f64,
    pub price: f64,
    /// Impact coefficient in force for the most recent price.
    pub lambda_coef: f64,
    /// Inventory premium in force for the most recent price.
    pub psi_coef: f64,
}

impl DealerState {
    pub fn initial(price: f64, pricing: &PricingParams) -> Self {
        DealerState { fundamental: price, inventory: 0.0, price, lambda_coef: pricing.lambda0, psi_coef: pricing.psi0 }
    }
}

/// Parameters of the dealer's pricing rule and fundamental innovation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingParams {
    pub lambda0: f64,
    pub alpha_lambda: f64,
    pub beta_lambda: f64,
    pub psi0: f64,
    pub alpha_psi: f64,
    pub beta_psi: f64,
    pub kappa: f64,
    pub sigma_eps: f64,
}

impl PricingParams {
    pub const NAMES: [&'static str; 8] =
        ["lambda0", "alpha_lambda", "beta_lambda", "psi0", "alpha_psi", "beta_psi", "kappa", "sigma_eps"];

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.lambda0,
            self.alpha_lambda,
            self.beta_lambda,
            self.psi0,
            self.alpha_psi,
            self.beta_psi,
            self.kappa,
            self.sigma_eps,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        PricingParams {
            lambda0: a[0],
            alpha_lambda: a[1],
            beta_lambda: a[2],
            psi0: a[3],
            alpha_psi: a[4],
            beta_psi: a[5],
            kappa: a[6],
            sigma_eps: a[7],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::NAMES.iter().zip(self.to_array()) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("pricing parameter {name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Saturation limits `(lambda_max, psi_max)` of the liquidity coefficients.
    pub fn coef_limits(&self) -> (f64, f64) {
        (
            self.lambda0 * (1.0 + self.alpha_lambda / self.beta_lambda),
            self.psi0 * (1.0 + self.alpha_psi / self.beta_psi),
        )
    }
}

impl Default for PricingParams {
    fn default() -> Self {
        PricingParams {
            lambda0: 0.005,
            alpha_lambda: 1.0,
            beta_lambda: 0.05,
            psi0: 0.005,
            alpha_psi: 1.0,
            beta_psi: 0.05,
            kappa: 0.2,
            sigma_eps: 0.1,
        }
    }
}

/// Centred exponential moving average of returns and squared deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolEstimator {
    pub mu_hat: f64,
    pub sigma2_hat: f64,
    pub beta: f64,
}

impl VolEstimator {
    pub fn new(beta: f64, sigma2_init: f64) -> Self {
        VolEstimator { mu_hat: 0.0, sigma2_hat: sigma2_init.max(0.0), beta }
    }

    /// Mean first, then variance around the just-updated mean.
    pub fn update(&mut self, r: f64) {
        let b = self.beta;
        self.mu_hat = (1.0 - b) * self.mu_hat + b * r;
        let dev = r - self.mu_hat;
        self.sigma2_hat = ((1.0 - b) * self.sigma2_hat + b * dev * dev).max(0.0);
    }

    pub fn vol(&self) -> f64 {
        self.sigma2_hat.sqrt()
    }
}

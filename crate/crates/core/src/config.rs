//! Run and experiment configuration.
//!
//! Configuration files are TOML with one section per concern:
//!
//! ```toml
//! [run]
//! seed = 7
//! n_agents = 20
//!
//! [run.pricing]
//! lambda0 = 0.02
//!
//! [experiment]
//! reps = 50
//!
//! [calibration]
//! n_sobol = 512
//! ```
//!
//! Every key has a default; unknown keys are rejected. The full schema is in
//! `docs/formats.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{Activation, AsyncSpec, DriftSpec};
use crate::engine::ShockKind;
use crate::error::{Error, Result};
use crate::state::PricingParams;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunConfig,
    pub experiment: ExperimentSettings,
    pub calibration: CalibrationSettings,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config =
            toml::from_str(text).map_err(|e| Error::Parse { path: "<config>".into(), msg: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config =
            toml::from_str(&text).map_err(|e| Error::Parse { path: path.display().to_string(), msg: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        self.experiment.validate()?;
        self.calibration.validate()
    }
}

/// Everything needed to simulate one market path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub n_agents: usize,
    pub n_steps: usize,
    /// Leading steps excluded from every outcome statistic.
    pub burn_in: usize,
    /// Number of lagged returns `L` in the public state.
    pub lags: usize,
    /// Feature dimension `K`.
    pub features: usize,
    pub activation: Activation,
    pub initial_price: f64,
    /// Trading periods per year, used to annualise volatility.
    pub periods_per_year: f64,
    /// Freeze `lambda_t = lambda0`, `psi_t = psi0` (negative control).
    pub constant_liquidity: bool,
    pub pricing: PricingParams,
    pub agents: AgentSettings,
    pub population: PopulationSettings,
    pub shock: ShockSettings,
    pub drift: DriftSpec,
    #[serde(rename = "async")]
    pub async_clock: AsyncSpec,
    pub stress: Option<StressWindow>,
    pub metrics: MetricsSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            n_agents: 20,
            n_steps: 3000,
            burn_in: 500,
            lags: 5,
            features: 5,
            activation: Activation::Tanh,
            initial_price: 100.0,
            periods_per_year: 252.0 * 78.0,
            constant_liquidity: false,
            pricing: PricingParams::default(),
            agents: AgentSettings::default(),
            population: PopulationSettings::default(),
            shock: ShockSettings::default(),
            drift: DriftSpec::default(),
            async_clock: AsyncSpec::default(),
            stress: None,
            metrics: MetricsSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn state_dim(&self) -> usize {
        self.lags + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_steps == 0 || self.lags == 0 || self.features == 0 {
            return Err(Error::config("n_agents, n_steps, lags and features must be positive"));
        }
        if self.burn_in >= self.n_steps {
            return Err(Error::config(format!(
                "burn_in ({}) must be smaller than n_steps ({})",
                self.burn_in, self.n_steps
            )));
        }
        if !(self.initial_price.is_finite() && self.periods_per_year > 0.0) {
            return Err(Error::config("initial_price must be finite and periods_per_year positive"));
        }
        self.pricing.validate()?;
        self.agents.validate()?;
        self.population.validate()?;
        self.shock.validate()?;
        self.drift.validate()?;
        self.async_clock.validate()?;
        if let Some(s) = &self.stress {
            if !(s.scale > 0.0) || s.start + s.len > self.n_steps {
                return Err(Error::config("stress window must have positive scale and fit inside the run"));
            }
        }
        self.metrics.validate()
    }

    /// Multiplier applied to the fundamental shock at step `t`.
    pub fn shock_scale_at(&self, t: usize) -> f64 {
        match &self.stress {
            Some(s) if t >= s.start && t < s.start + s.len => s.scale,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSettings {
    /// EWMA weight of the slippage estimator.
    pub rho: f64,
    /// Trade-size floor in the slippage ratio.
    pub eps_reg: f64,
    /// EWMA weight of the public volatility estimator.
    pub vol_beta: f64,
    /// Position cap shared by all agents.
    pub d_max: f64,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings { rho: 0.05, eps_reg: 0.5, vol_beta: 0.05, d_max: 5.0 }
    }
}

impl AgentSettings {
    fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.vol_beta > 0.0 && self.vol_beta < 1.0) {
            return Err(Error::config("rho and vol_beta must lie in (0,1)"));
        }
        if !(self.eps_reg > 0.0 && self.d_max > 0.0) {
            return Err(Error::config("eps_reg and d_max must be positive"));
        }
        Ok(())
    }
}

/// Distributional recipe for an agent population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSettings {
    /// Standard deviation of the entries of the benchmark matrix.
    pub w_center_scale: f64,
    /// Cross-sectional spread of `W_i` around the benchmark.
    pub w_sigma: f64,
    pub gamma_mean: f64,
    /// Lognormal sigma of risk aversion.
    pub gamma_sigma: f64,
    pub eta_mean: f64,
    /// Lognormal sigma of the learning rate.
    pub eta_sigma: f64,
    pub theta_sigma: f64,
}

impl Default for PopulationSettings {
    fn default() -> Self {
        PopulationSettings {
            w_center_scale: 1.0,
            w_sigma: 0.5,
            gamma_mean: 2.0,
            gamma_sigma: 0.3,
            eta_mean: 0.01,
            eta_sigma: 0.3,
            theta_sigma: 0.1,
        }
    }
}

impl PopulationSettings {
    fn validate(&self) -> Result<()> {
        let nonneg = [self.w_center_scale, self.w_sigma, self.gamma_sigma, self.eta_sigma, self.theta_sigma];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::config("population spreads must be nonnegative and finite"));
        }
        if !(self.gamma_mean > 0.0 && self.eta_mean > 0.0) {
            return Err(Error::config("gamma_mean and eta_mean must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShockSettings {
    pub kind: ShockKind,
    pub stable_alpha: f64,
    pub stable_scale: f64,
    /// Jump arrival probability per step.
    pub jump_intensity: f64,
}

impl Default for ShockSettings {
    fn default() -> Self {
        ShockSettings { kind: ShockKind::Gaussian, stable_alpha: 1.5, stable_scale: 0.2, jump_intensity: 0.01 }
    }
}

impl ShockSettings {
    fn validate(&self) -> Result<()> {
        if !(self.stable_alpha > 0.0 && self.stable_alpha <= 2.0) {
            return Err(Error::config(format!("stable_alpha must lie in (0,2], got {}", self.stable_alpha)));
        }
        if !(self.stable_scale > 0.0) || !(0.0..=1.0).contains(&self.jump_intensity) {
            return Err(Error::config("stable_scale must be positive and jump_intensity in [0,1]"));
        }
        Ok(())
    }
}

/// Window of steps during which fundamental shocks are scaled up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressWindow {
    pub start: usize,
    pub len: usize,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSettings {
    /// Crash threshold as a multiple of the return standard deviation.
    pub crash_k: f64,
    /// Maximum number of states kept in an empirical reference measure.
    pub measure_states: usize,
    /// Extra weight on top-decile volatility states in the stress measure.
    pub stress_weight: f64,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        MetricsSettings { crash_k: 4.0, measure_states: 250, stress_weight: 9.0 }
    }
}

impl MetricsSettings {
    fn validate(&self) -> Result<()> {
        if !(self.crash_k > 0.0) || self.measure_states == 0 || !(self.stress_weight >= 0.0) {
            return Err(Error::config("crash_k and measure_states must be positive, stress_weight nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub reps: usize,
    pub w_sigma_wide: f64,
    pub w_sigma_tight: f64,
    pub gamma_sigma_high: f64,
    pub gamma_sigma_low: f64,
    pub eta_sigma_high: f64,
    pub eta_sigma_low: f64,
    pub scan_points: usize,
    pub calm_steps: usize,
    pub stress_steps: usize,
    pub stress_scale: f64,
    pub n_candidates: usize,
    /// Relative forecast-distance band for a strict match.
    pub match_band: f64,
    /// Required representation-distance ratio between matched groups.
    pub repr_gap: f64,
    /// Strict-match yield below which the design switches to binning.
    pub min_strict_yield: f64,
    /// Rolling window for dynamic correlations.
    pub window: usize,
    pub record_every: usize,
    pub convergence_nu: Vec<f64>,
    pub convergence_sigma_w: f64,
    pub convergence_steps: usize,
    pub d_crit: Option<f64>,
    pub event_multiple: f64,
    pub stress_nu_w: f64,
    pub stress_sigma_w: f64,
    pub stress_sigma_base: f64,
    pub stress_rate_mu: f64,
    pub stress_rate_sigma: f64,
    /// Highest tolerated fraction of aborted replications.
    pub abort_ceiling: f64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            reps: 50,
            w_sigma_wide: 1.0,
            w_sigma_tight: 0.05,
            gamma_sigma_high: 0.6,
            gamma_sigma_low: 0.05,
            eta_sigma_high: 0.6,
            eta_sigma_low: 0.05,
            scan_points: 15,
            calm_steps: 2000,
            stress_steps: 300,
            stress_scale: 5.0,
            n_candidates: 2000,
            match_band: 0.05,
            repr_gap: 2.0,
            min_strict_yield: 0.03,
            window: 200,
            record_every: 25,
            convergence_nu: vec![0.0, 0.001, 0.01, 0.1],
            convergence_sigma_w: 0.002,
            convergence_steps: 5000,
            d_crit: None,
            event_multiple: 2.0,
            stress_nu_w: 0.05,
            stress_sigma_w: 0.002,
            stress_sigma_base: 0.01,
            stress_rate_mu: -0.5,
            stress_rate_sigma: 0.5,
            abort_ceiling: 0.1,
        }
    }
}

impl ExperimentSettings {
    fn validate(&self) -> Result<()> {
        if self.reps == 0 || self.scan_points == 0 || self.window < 3 || self.record_every == 0 {
            return Err(Error::config("reps, scan_points, record_every must be positive and window at least 3"));
        }
        if !(self.w_sigma_wide >= self.w_sigma_tight && self.w_sigma_tight > 0.0) {
            return Err(Error::config("need w_sigma_wide >= w_sigma_tight > 0"));
        }
        if !(self.stress_scale > 0.0 && self.match_band > 0.0 && self.repr_gap >= 1.0) {
            return Err(Error::config("stress_scale, match_band must be positive and repr_gap at least 1"));
        }
        if !(0.0..=1.0).contains(&self.abort_ceiling) {
            return Err(Error::config("abort_ceiling must lie in [0,1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMatrix {
    Identity,
    InvBootstrapVar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub n_sobol: usize,
    pub n_local_starts: usize,
    pub sim_steps: usize,
    pub sim_burn_in: usize,
    pub sim_reps: usize,
    pub n_bootstrap: usize,
    pub weight_matrix: WeightMatrix,
    /// Per-parameter `(low, high)` in the order of [`PricingParams::NAMES`].
    pub bounds: Vec<(f64, f64)>,
    /// Data-generating parameters for synthetic targets.
    pub target_theta: PricingParams,
    pub target_reps: usize,
    /// Offset added to the seed when generating synthetic targets.
    pub target_seed_offset: u64,
    pub local_max_evals: usize,
    pub bootstrap_max_evals: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        let t = PricingParams::default();
        let bounds = t.to_array().iter().map(|v| (v / 4.0, v * 4.0)).collect();
        CalibrationSettings {
            n_sobol: 512,
            n_local_starts: 8,
            sim_steps: 3000,
            sim_burn_in: 500,
            sim_reps: 10,
            n_bootstrap: 200,
            weight_matrix: WeightMatrix::InvBootstrapVar,
            bounds,
            target_theta: t,
            target_reps: 40,
            target_seed_offset: 1_000_003,
            local_max_evals: 300,
            bootstrap_max_evals: 80,
        }
    }
}

impl CalibrationSettings {
    fn validate(&self) -> Result<()> {
        if self.n_sobol == 0 || self.n_local_starts == 0 || self.sim_reps == 0 || self.target_reps == 0 {
            return Err(Error::config("calibration counts must be positive"));
        }
        if self.sim_burn_in >= self.sim_steps {
            return Err(Error::config("calibration sim_burn_in must be smaller than sim_steps"));
        }
        if self.bounds.len() != 8 {
            return Err(Error::config(format!("expected 8 parameter bounds, got {}", self.bounds.len())));
        }
        for (name, (lo, hi)) in PricingParams::NAMES.iter().zip(&self.bounds) {
            if !(*lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::config(format!("bounds for {name} must satisfy 0 < low <= high, got ({lo}, {hi})")));
            }
        }
        self.target_theta.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let cfg = Config::default();
        let text = cfg.to_toml_string();
        assert_eq!(Config::from_toml_str(&text).unwrap(), cfg);

        let partial = "[run]\nseed = 7\nn_agents = 4\n\n[run.pricing]\nlambda0 = 0.5\n";
        let cfg = Config::from_toml_str(partial).unwrap();
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.run.n_agents, 4);
        assert_eq!(cfg.run.pricing.lambda0, 0.5);
        assert_eq!(cfg.run.pricing.psi0, PricingParams::default().psi0);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(Config::from_toml_str("[run]\nbogus = 1\n").is_err());
        assert!(Config::from_toml_str("[run]\nburn_in = 5000\nn_steps = 100\n").is_err());
        assert!(Config::from_toml_str("[run.shock]\nstable_alpha = 2.5\n").is_err());
    }
}

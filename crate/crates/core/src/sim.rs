//! The per-period market loop.
//!
//! One call to [`Simulation::step`] runs a full trading period:
//!
//! 1. assemble the public state from the return history, the shared
//!    volatility estimate and last period's net flow;
//! 2. every active agent encodes, forecasts and sizes a position from that
//!    same snapshot (read phase);
//! 3. positions are committed and net flow is aggregated;
//! 4. the dealer absorbs the flow and prices the period;
//! 5. agents settle against the new return (readout update for the decision
//!    just made, then the slippage estimate), the shared volatility estimator
//!    updates;
//! 6. representations drift.

use nalgebra::DMatrix;

use crate::agents::{
    draw_center, drift_base, drift_representation, init_population, Agent, Decision, DriftSpec, PoissonClocks, PopulationSpec,
};
use crate::config::RunConfig;
use crate::engine::{draw_shock, price_step, LiquidityMode, ShockSpec, StepResult};
use crate::error::{Error, Result};
use crate::rng::{self, Stream, StreamKind};
use crate::state::{DealerState, VolEstimator};

/// What a simulation keeps per step beyond the market series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecordLevel {
    /// Prices, returns, flows, inventory, liquidity and volatility only.
    Market,
    /// Market series plus per-agent forecasts, positions, trades and the
    /// observed state vectors.
    #[default]
    Full,
}

/// Recorded path of one simulation. Per-step vectors are indexed by step;
/// per-agent series are indexed `[agent][step]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub prices: Vec<f64>,
    pub returns: Vec<f64>,
    pub flows: Vec<f64>,
    pub inventories: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub psis: Vec<f64>,
    /// Public volatility signal agents saw when deciding.
    pub vols: Vec<f64>,
    pub shocks: Vec<f64>,
    /// Cross-sectional variance of forecasts each step.
    pub forecast_dispersion: Vec<f64>,
    pub forecasts: Vec<Vec<f64>>,
    pub positions: Vec<Vec<f64>>,
    pub trades: Vec<Vec<f64>>,
    /// Flattened state vectors, `state_dim` entries per step.
    pub states: Vec<f64>,
    pub state_dim: usize,
    /// Price before the first recorded step.
    pub initial_price: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn n_states(&self) -> usize {
        if self.state_dim == 0 {
            0
        } else {
            self.states.len() / self.state_dim
        }
    }

    pub fn step_result(&self, t: usize) -> StepResult {
        StepResult {
            price: self.prices[t],
            ret: self.returns[t],
            flow: self.flows[t],
            inventory: self.inventories[t],
            lambda_coef: self.lambdas[t],
            psi_coef: self.psis[t],
        }
    }
}

/// Population recipe implied by a run configuration around `w_center`.
pub fn population_spec(cfg: &RunConfig, w_center: DMatrix<f64>) -> PopulationSpec {
    let p = &cfg.population;
    PopulationSpec::mean_preserving(
        cfg.n_agents,
        w_center,
        p.w_sigma,
        p.gamma_mean,
        p.gamma_sigma,
        p.eta_mean,
        p.eta_sigma,
        p.theta_sigma,
        cfg.agents.d_max,
        cfg.agents.rho,
        cfg.agents.eps_reg,
    )
}

/// Benchmark representation for a replication.
pub fn replication_center(cfg: &RunConfig, replication: u32) -> DMatrix<f64> {
    let mut rng = rng::stream(cfg.seed, replication, StreamKind::Center, 0);
    draw_center(cfg.features, cfg.state_dim(), cfg.population.w_center_scale, &mut rng)
}

/// Initial population for a replication. The same replication index yields
/// the same underlying draws for every dispersion setting.
pub fn replication_population(cfg: &RunConfig, replication: u32) -> Result<(Vec<Agent>, DMatrix<f64>)> {
    let center = replication_center(cfg, replication);
    let spec = population_spec(cfg, center.clone());
    let mut rng = rng::stream(cfg.seed, replication, StreamKind::Population, 0);
    Ok((init_population(&spec, &mut rng)?, center))
}

pub fn shock_spec(cfg: &RunConfig) -> ShockSpec {
    ShockSpec {
        kind: cfg.shock.kind,
        sigma_eps: cfg.pricing.sigma_eps,
        stable_alpha: cfg.shock.stable_alpha,
        stable_scale: cfg.shock.stable_scale,
        jump_intensity: cfg.shock.jump_intensity,
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: RunConfig,
    agents: Vec<Agent>,
    w_base: DMatrix<f64>,
    dealer: DealerState,
    vol: VolEstimator,
    history: Vec<f64>,
    last_flow: f64,
    shock: ShockSpec,
    shock_scale: f64,
    mode: LiquidityMode,
    drift: DriftSpec,
    drift_on: bool,
    shock_rng: Stream,
    base_rng: Stream,
    drift_rngs: Vec<Stream>,
    clocks: Option<PoissonClocks>,
    active: Vec<bool>,
    level: RecordLevel,
    traj: Trajectory,
    t: usize,
}

impl Simulation {
    /// Fresh simulation for one replication of `cfg`.
    pub fn new(cfg: &RunConfig, replication: u32) -> Result<Self> {
        cfg.validate()?;
        let (agents, center) = replication_population(cfg, replication)?;
        Self::with_population(cfg, agents, center, replication)
    }

    /// Simulation over a supplied population and benchmark representation.
    pub fn with_population(cfg: &RunConfig, agents: Vec<Agent>, w_base: DMatrix<f64>, replication: u32) -> Result<Self> {
        cfg.validate()?;
        let ks = cfg.state_dim();
        if agents.is_empty() {
            return Err(Error::config("simulation needs at least one agent"));
        }
        if agents.iter().any(|a| a.state.state_dim() != ks) || w_base.ncols() != ks {
            return Err(Error::config(format!("every representation must have {ks} columns")));
        }
        let n = agents.len();
        let shock = shock_spec(cfg);
        shock.validate()?;
        let clocks = if cfg.async_clock.enabled {
            Some(PoissonClocks::new(&cfg.async_clock, n, cfg.seed, replication)?)
        } else {
            None
        };
        let seed = cfg.seed;
        let mode = if cfg.constant_liquidity { LiquidityMode::Constant } else { LiquidityMode::Inventory };
        let dealer = DealerState::initial(cfg.initial_price, &cfg.pricing);
        let traj = Trajectory {
            state_dim: ks,
            initial_price: cfg.initial_price,
            forecasts: vec![Vec::new(); n],
            positions: vec![Vec::new(); n],
            trades: vec![Vec::new(); n],
            ..Default::default()
        };
        Ok(Simulation {
            agents,
            w_base,
            dealer,
            vol: VolEstimator::new(cfg.agents.vol_beta, cfg.pricing.sigma_eps.powi(2)),
            history: vec![0.0; cfg.lags],
            last_flow: 0.0,
            shock,
            shock_scale: 1.0,
            mode,
            drift: cfg.drift,
            drift_on: cfg.drift.is_active(),
            shock_rng: rng::stream(seed, replication, StreamKind::Shock, 0),
            base_rng: rng::stream(seed, replication, StreamKind::Base, 0),
            drift_rngs: (0..n).map(|i| rng::stream(seed, replication, StreamKind::Drift, i as u32)).collect(),
            clocks,
            active: vec![true; n],
            level: RecordLevel::Full,
            traj,
            t: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn set_record_level(&mut self, level: RecordLevel) {
        self.level = level;
    }

    /// Extra multiplier on fundamental shocks, on top of any configured
    /// stress window.
    pub fn set_shock_scale(&mut self, scale: f64) {
        self.shock_scale = scale;
    }

    pub fn set_drift(&mut self, drift: DriftSpec, enabled: bool) -> Result<()> {
        drift.validate()?;
        self.drift = drift;
        self.drift_on = enabled;
        Ok(())
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn w_base(&self) -> &DMatrix<f64> {
        &self.w_base
    }

    pub fn dealer(&self) -> &DealerState {
        &self.dealer
    }

    pub fn vol(&self) -> &VolEstimator {
        &self.vol
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.traj
    }

    /// Steps completed so far.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Public state the agents will see next period.
    pub fn current_state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.history.len() + 2);
        s.extend_from_slice(&self.history);
        s.push(self.vol.vol());
        s.push(self.last_flow);
        s
    }

    /// Runs one trading period. A numeric fault leaves the simulation in an
    /// unusable state; callers should abandon the replication.
    pub fn step(&mut self) -> Result<StepResult> {
        let t = self.t;
        let s = self.current_state();
        let sigma2 = self.vol.sigma2_hat;
        let kappa = self.cfg.pricing.kappa;
        let act = self.cfg.activation;

        if let Some(c) = self.clocks.as_mut() {
            c.tick(&mut self.active);
        }

        let decisions: Vec<Option<Decision>> = self
            .agents
            .iter()
            .zip(&self.active)
            .map(|(agent, &on)| on.then(|| agent.decide(&s, sigma2, kappa, act)))
            .collect();
        let flow: f64 = decisions.iter().flatten().map(|d| d.choice.trade).sum();

        let scale = self.shock_scale * self.cfg.shock_scale_at(t);
        let shock = scale * draw_shock(&self.shock, &mut self.shock_rng)?;
        let (dealer, rec) = price_step(&self.dealer, flow, shock, &self.cfg.pricing, self.mode, t)?;
        self.dealer = dealer;

        for (agent, d) in self.agents.iter_mut().zip(decisions) {
            agent.settle(rec.ret, d);
        }
        let decision_vol = s[self.history.len()];
        self.vol.update(rec.ret);
        self.history.rotate_right(1);
        self.history[0] = rec.ret;
        self.last_flow = flow;

        if self.drift_on {
            drift_base(&mut self.w_base, &self.drift, &mut self.base_rng);
            for (agent, rng) in self.agents.iter_mut().zip(self.drift_rngs.iter_mut()) {
                drift_representation(&mut agent.state.w, &self.w_base, &self.drift, rng);
            }
        }

        self.record(&rec, shock, decision_vol, &s);
        self.t += 1;
        Ok(rec)
    }

    fn record(&mut self, rec: &StepResult, shock: f64, vol: f64, s: &[f64]) {
        let tr = &mut self.traj;
        tr.prices.push(rec.price);
        tr.returns.push(rec.ret);
        tr.flows.push(rec.flow);
        tr.inventories.push(rec.inventory);
        tr.lambdas.push(rec.lambda_coef);
        tr.psis.push(rec.psi_coef);
        tr.vols.push(vol);
        tr.shocks.push(shock);
        if self.level == RecordLevel::Full {
            let n = self.agents.len() as f64;
            let mean = self.agents.iter().map(|a| a.state.last_forecast).sum::<f64>() / n;
            let var = self.agents.iter().map(|a| (a.state.last_forecast - mean).powi(2)).sum::<f64>() / n;
            tr.forecast_dispersion.push(var);
            for (i, a) in self.agents.iter().enumerate() {
                tr.forecasts[i].push(a.state.last_forecast);
                tr.positions[i].push(a.state.position);
                tr.trades[i].push(a.state.last_trade);
            }
            tr.states.extend_from_slice(s);
        }
    }

    /// Runs `n` periods.
    pub fn run(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            self.step()?;
        }
        Ok(())
    }

    /// Runs until the configured horizon.
    pub fn run_to_end(&mut self) -> Result<()> {
        let left = self.cfg.n_steps.saturating_sub(self.t);
        self.run(left)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Activation, AsyncSpec};
    use crate::engine::ReturnDecomposition;

    fn small() -> RunConfig {
        RunConfig { n_agents: 6, n_steps: 600, burn_in: 100, ..RunConfig::default() }
    }

    #[test]
    fn deterministic_replay() {
        let cfg = small();
        let mut a = Simulation::new(&cfg, 0).unwrap();
        let mut b = Simulation::new(&cfg, 0).unwrap();
        a.run_to_end().unwrap();
        b.run_to_end().unwrap();
        assert_eq!(a.trajectory(), b.trajectory());
        let mut c = Simulation::new(&cfg, 1).unwrap();
        c.run_to_end().unwrap();
        assert_ne!(a.trajectory().returns, c.trajectory().returns);
    }

    #[test]
    fn inventory_conservation_and_position_cap() {
        let cfg = small();
        let mut sim = Simulation::new(&cfg, 3).unwrap();
        for _ in 0..cfg.n_steps {
            sim.step().unwrap();
            let total: f64 = sim.agents().iter().map(|a| a.state.position).sum();
            assert!((sim.dealer().inventory + total).abs() < 1e-9);
            for a in sim.agents() {
                assert!(a.state.position.abs() <= a.params.d_max);
                assert!(a.state.lambda_hat >= 0.0);
            }
        }
    }

    #[test]
    fn return_identity_on_simulated_path() {
        let cfg = small();
        let mut sim = Simulation::new(&cfg, 0).unwrap();
        sim.run_to_end().unwrap();
        let tr = sim.trajectory();
        for t in 1..tr.len() {
            let d = ReturnDecomposition::between(&tr.step_result(t - 1), &tr.step_result(t), tr.shocks[t]);
            assert!((d.total() - tr.returns[t]).abs() < 1e-10);
        }
    }

    #[test]
    fn static_parameters_never_change() {
        let cfg = small();
        let mut sim = Simulation::new(&cfg, 2).unwrap();
        let before: Vec<_> = sim.agents().iter().map(|a| (a.params.gamma.to_bits(), a.params.eta_theta.to_bits())).collect();
        sim.run_to_end().unwrap();
        let after: Vec<_> = sim.agents().iter().map(|a| (a.params.gamma.to_bits(), a.params.eta_theta.to_bits())).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn perfect_homogeneity_gives_identical_agents() {
        let mut cfg = small();
        cfg.activation = Activation::Linear;
        cfg.population.w_sigma = 0.0;
        cfg.population.theta_sigma = 0.0;
        cfg.population.gamma_sigma = 0.0;
        cfg.population.eta_sigma = 0.0;
        let mut sim = Simulation::new(&cfg, 0).unwrap();
        sim.run_to_end().unwrap();
        let tr = sim.trajectory();
        for i in 1..cfg.n_agents {
            assert_eq!(tr.forecasts[i], tr.forecasts[0]);
            assert_eq!(tr.positions[i], tr.positions[0]);
        }
    }

    #[test]
    fn saturated_clocks_match_synchronous_run() {
        let cfg = small();
        let mut sync = Simulation::new(&cfg, 0).unwrap();
        sync.run_to_end().unwrap();
        let mut acfg = cfg.clone();
        acfg.async_clock = AsyncSpec { enabled: true, rate_mu: f64::INFINITY, rate_sigma: 0.5 };
        let mut asim = Simulation::new(&acfg, 0).unwrap();
        asim.run_to_end().unwrap();
        assert_eq!(sync.trajectory(), asim.trajectory());
    }

    #[test]
    fn inactive_agents_hold() {
        let mut cfg = small();
        cfg.async_clock = AsyncSpec { enabled: true, rate_mu: (0.2f64).ln(), rate_sigma: 0.0 };
        let mut sim = Simulation::new(&cfg, 0).unwrap();
        sim.run_to_end().unwrap();
        let tr = sim.trajectory();
        let holds = tr.trades[0].iter().filter(|&&d| d == 0.0).count();
        assert!(holds > cfg.n_steps / 2);
    }

    #[test]
    fn learning_pairs_forecast_with_following_return() {
        // Harness: replay each decision by hand and check the readout moved by
        // the error against the return priced one period after it, not the
        // one that contains its own trade.
        let mut cfg = small();
        cfg.n_agents = 1;
        cfg.activation = Activation::Linear;
        let mut sim = Simulation::new(&cfg, 0).unwrap();
        let mut prev: Option<(Agent, Decision)> = None;
        for _ in 0..50 {
            let before = sim.agents()[0].clone();
            let d = before.decide(&sim.current_state(), sim.vol().sigma2_hat, cfg.pricing.kappa, cfg.activation);
            let rec = sim.step().unwrap();
            let after = &sim.agents()[0];
            if let Some((a, pd)) = &prev {
                let step = a.params.eta_theta * (rec.ret - a.state.lambda_hat * pd.choice.trade.abs() - pd.forecast);
                for k in 0..pd.features.len() {
                    let expected = before.state.theta[k] + step * pd.features[k];
                    assert!((after.state.theta[k] - expected).abs() < 1e-12);
                }
            } else {
                assert_eq!(after.state.theta, before.state.theta);
            }
            assert!(after.state.pending);
            prev = Some((before, d));
        }
    }

    #[test]
    fn constant_liquidity_freezes_coefficients() {
        let mut cfg = small();
        cfg.constant_liquidity = true;
        let mut sim = Simulation::new(&cfg, 0).unwrap();
        sim.run_to_end().unwrap();
        let tr = sim.trajectory();
        assert!(tr.lambdas.iter().all(|&l| l == cfg.pricing.lambda0));
        assert!(tr.psis.iter().all(|&p| p == cfg.pricing.psi0));
    }
}

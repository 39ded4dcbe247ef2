//! Representation-readout trading agents.
//!
//! Each agent encodes the public state through its own representation matrix
//! (`X = phi(W S)`), forecasts with a linear readout (`r_hat = theta' X`),
//! sizes a position with a partial-adjustment rule under a hard cap, and
//! learns the readout by SGD against an execution-adjusted target. The
//! representation itself only moves through OU drift toward a shared
//! benchmark.
//!
//! Within one period the work splits into a read phase and a write phase:
//! [`Agent::decide`] takes `&self` and only reads the shared market snapshot,
//! so every agent can decide in parallel; [`Agent::commit`], [`Agent::settle`]
//! and [`drift_representation`] mutate one agent each and never touch another
//! agent's state.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream, StreamKind};
use crate::state::{AgentParams, AgentState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }
}

/// `mu` of a lognormal with the given mean and log-sigma.
pub fn lognormal_mu(mean: f64, sigma: f64) -> f64 {
    mean.ln() - 0.5 * sigma * sigma
}

/// Recipe for drawing an agent population.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub n_agents: usize,
    /// Benchmark representation the cross-section is centred on.
    pub w_center: DMatrix<f64>,
    pub w_sigma: f64,
    pub gamma_mu: f64,
    pub gamma_sigma: f64,
    pub eta_mu: f64,
    pub eta_sigma: f64,
    pub theta_sigma: f64,
    pub d_max: f64,
    pub rho: f64,
    pub eps_reg: f64,
}

impl PopulationSpec {
    /// Builds a spec whose lognormal location parameters are solved so that
    /// `E[gamma] = gamma_mean` and `E[eta] = eta_mean` whatever the spreads.
    #[allow(clippy::too_many_arguments)]
    pub fn mean_preserving(
        n_agents: usize,
        w_center: DMatrix<f64>,
        w_sigma: f64,
        gamma_mean: f64,
        gamma_sigma: f64,
        eta_mean: f64,
        eta_sigma: f64,
        theta_sigma: f64,
        d_max: f64,
        rho: f64,
        eps_reg: f64,
    ) -> Self {
        PopulationSpec {
            n_agents,
            w_center,
            w_sigma,
            gamma_mu: lognormal_mu(gamma_mean, gamma_sigma),
            gamma_sigma,
            eta_mu: lognormal_mu(eta_mean, eta_sigma),
            eta_sigma,
            theta_sigma,
            d_max,
            rho,
            eps_reg,
        }
    }

    pub fn gamma_mean(&self) -> f64 {
        (self.gamma_mu + 0.5 * self.gamma_sigma * self.gamma_sigma).exp()
    }

    pub fn eta_mean(&self) -> f64 {
        (self.eta_mu + 0.5 * self.eta_sigma * self.eta_sigma).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.w_center.nrows() == 0 || self.w_center.ncols() == 0 {
            return Err(Error::config("population needs at least one agent and a non-empty benchmark matrix"));
        }
        if [self.w_sigma, self.gamma_sigma, self.eta_sigma, self.theta_sigma].iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("population spreads must be nonnegative"));
        }
        Ok(())
    }
}

/// Benchmark matrix with i.i.d. `N(0, scale^2)` entries.
pub fn draw_center<R: Rng + ?Sized>(k: usize, ks: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(k, ks, |_, _| { let z: f64 = StandardNormal.sample(rng); scale * z })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub params: AgentParams,
    pub state: AgentState,
}

/// Draws a population. Agent `i` consumes the same standard-normal draws
/// regardless of the spreads, so two specs that differ only in dispersion
/// produce matched populations from the same stream.
pub fn init_population<R: Rng + ?Sized>(spec: &PopulationSpec, rng: &mut R) -> Result<Vec<Agent>> {
    spec.validate()?;
    let (k, ks) = spec.w_center.shape();
    let mut out = Vec::with_capacity(spec.n_agents);
    for _ in 0..spec.n_agents {
        let z_w = DMatrix::from_fn(k, ks, |_, _| StandardNormal.sample(rng));
        let z_theta = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
        let z_gamma: f64 = StandardNormal.sample(rng);
        let z_eta: f64 = StandardNormal.sample(rng);
        let w = &spec.w_center + z_w * spec.w_sigma;
        let theta = z_theta * spec.theta_sigma;
        let params = AgentParams {
            gamma: (spec.gamma_mu + spec.gamma_sigma * z_gamma).exp(),
            eta_theta: (spec.eta_mu + spec.eta_sigma * z_eta).exp(),
            d_max: spec.d_max,
            rho: spec.rho,
            eps_reg: spec.eps_reg,
        };
        params.validate()?;
        out.push(Agent { params, state: AgentState::new(w, theta) });
    }
    Ok(out)
}

/// `phi(W s)` written into `out`.
#[inline]
pub fn encode_into(w: &DMatrix<f64>, s: &[f64], activation: Activation, out: &mut [f64]) {
    let k = w.nrows();
    debug_assert_eq!(w.ncols(), s.len());
    debug_assert_eq!(out.len(), k);
    let data = w.as_slice();
    out.fill(0.0);
    for (j, &sj) in s.iter().enumerate() {
        let col = &data[j * k..(j + 1) * k];
        for (o, &wkj) in out.iter_mut().zip(col) {
            *o += wkj * sj;
        }
    }
    for o in out.iter_mut() {
        *o = activation.apply(*o);
    }
}

pub fn encode(agent: &AgentState, s: &[f64], activation: Activation) -> Result<DVector<f64>> {
    if agent.w.ncols() != s.len() {
        return Err(Error::config(format!(
            "state dimension {} does not match representation width {}",
            s.len(),
            agent.w.ncols()
        )));
    }
    let mut out = DVector::zeros(agent.w.nrows());
    encode_into(&agent.w, s, activation, out.as_mut_slice());
    Ok(out)
}

#[inline]
pub fn forecast(theta: &DVector<f64>, x: &[f64]) -> f64 {
    theta.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// EWMA of realized slippage `|r / max(|last trade|, eps)|`.
pub fn update_slippage(agent: &mut AgentState, realized_ret: f64, params: &AgentParams) -> f64 {
    let size = agent.last_trade.abs().max(params.eps_reg);
    let obs = (realized_ret / size).abs();
    agent.lambda_hat = (1.0 - params.rho) * agent.lambda_hat + params.rho * obs;
    agent.lambda_hat
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionChoice {
    /// Unconstrained partial-adjustment target.
    pub target: f64,
    /// Target clipped to the position cap.
    pub position: f64,
    pub trade: f64,
}

/// Partial-adjustment position rule with a hard cap.
pub fn choose_position(
    agent: &AgentState,
    params: &AgentParams,
    r_hat: f64,
    sigma2: f64,
    kappa: f64,
) -> PositionChoice {
    let friction = kappa + agent.lambda_hat;
    let denom = params.gamma * sigma2 + friction;
    assert!(denom > 0.0, "position-rule denominator must be positive, got {denom}");
    let target = (r_hat + friction * agent.position) / denom;
    let position = target.signum() * target.abs().min(params.d_max);
    let position = if target == 0.0 { 0.0 } else { position };
    PositionChoice { target, position, trade: position - agent.position }
}

/// Readout SGD step for the cached decision, given the return that followed.
pub fn learn(agent: &mut AgentState, params: &AgentParams, r_next: f64) {
    let target = r_next - agent.last_lambda_hat * agent.last_trade.abs();
    let step = params.eta_theta * (target - agent.last_forecast);
    agent.theta.axpy(step, &agent.last_features, 1.0);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSpec {
    /// Mean-reversion speed toward the benchmark.
    pub nu_w: f64,
    /// Idiosyncratic exploration volatility.
    pub sigma_w: f64,
    /// Volatility of the benchmark's own random walk.
    pub sigma_base: f64,
    pub dt: f64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec { nu_w: 0.0, sigma_w: 0.0, sigma_base: 0.0, dt: 1.0 }
    }
}

impl DriftSpec {
    pub fn is_active(&self) -> bool {
        self.nu_w > 0.0 || self.sigma_w > 0.0 || self.sigma_base > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu_w >= 0.0 && self.sigma_w >= 0.0 && self.sigma_base >= 0.0 && self.dt > 0.0) {
            return Err(Error::config("drift parameters must be nonnegative with positive dt"));
        }
        if self.nu_w * self.dt >= 1.0 {
            return Err(Error::config(format!(
                "explicit drift step is unstable: nu_w * dt = {} must be below 1",
                self.nu_w * self.dt
            )));
        }
        Ok(())
    }

    /// Stationary variance of one matrix entry around the benchmark under the
    /// discretised OU step.
    pub fn stationary_variance(&self) -> f64 {
        let a = self.nu_w * self.dt;
        self.sigma_w * self.sigma_w * self.dt / (2.0 * a - a * a)
    }
}

/// Euler-Maruyama step of the matrix OU process toward `w_base`.
pub fn drift_representation<R: Rng + ?Sized>(w: &mut DMatrix<f64>, w_base: &DMatrix<f64>, spec: &DriftSpec, rng: &mut R) {
    let pull = spec.nu_w * spec.dt;
    let noise = spec.sigma_w * spec.dt.sqrt();
    for (x, b) in w.iter_mut().zip(w_base.iter()) {
        let mut next = *x + pull * (b - *x);
        if noise > 0.0 {
            let g: f64 = StandardNormal.sample(rng);
            next += noise * g;
        }
        *x = next;
    }
}

/// Brownian step of the benchmark representation itself.
pub fn drift_base<R: Rng + ?Sized>(w_base: &mut DMatrix<f64>, spec: &DriftSpec, rng: &mut R) {
    if spec.sigma_base <= 0.0 {
        return;
    }
    let s = spec.sigma_base * spec.dt.sqrt();
    for x in w_base.iter_mut() {
        let g: f64 = StandardNormal.sample(rng);
        *x += s * g;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsyncSpec {
    pub enabled: bool,
    /// Log-location of agent arrival rates (per step). `inf` clamps every
    /// agent to one update per step.
    pub rate_mu: f64,
    pub rate_sigma: f64,
}

impl Default for AsyncSpec {
    fn default() -> Self {
        AsyncSpec { enabled: false, rate_mu: 0.0, rate_sigma: 0.5 }
    }
}

impl AsyncSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_sigma >= 0.0 && self.rate_sigma.is_finite()) || self.rate_mu.is_nan() || self.rate_mu == f64::NEG_INFINITY {
            return Err(Error::config("async rates must be strictly positive: need finite rate_sigma >= 0 and rate_mu > -inf"));
        }
        Ok(())
    }
}

/// Per-agent Poisson clocks observed once per step.
///
/// An agent is active in a step when at least one arrival of its Poisson
/// process falls inside it, so the activation probability is `1 - exp(-rate)`
/// and saturates at one update per step as the rate grows.
#[derive(Debug, Clone)]
pub struct PoissonClocks {
    probs: Vec<f64>,
    streams: Vec<Stream>,
}

impl PoissonClocks {
    pub fn new(spec: &AsyncSpec, n_agents: usize, seed: u64, replication: u32) -> Result<Self> {
        spec.validate()?;
        let mut streams: Vec<Stream> =
            (0..n_agents).map(|i| rng::stream(seed, replication, StreamKind::Clock, i as u32)).collect();
        let probs = streams
            .iter_mut()
            .map(|s| {
                let z: f64 = StandardNormal.sample(s);
                let rate = (spec.rate_mu + spec.rate_sigma * z).exp();
                if spec.enabled {
                    1.0 - (-rate).exp()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(PoissonClocks { probs, streams })
    }

    /// Activation probability per step for each agent.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn tick(&mut self, active: &mut [bool]) {
        for ((a, p), s) in active.iter_mut().zip(&self.probs).zip(self.streams.iter_mut()) {
            *a = if *p >= 1.0 { true } else { s.random::<f64>() < *p };
        }
    }
}

/// Full `agents x steps` activation schedule.
pub fn poisson_clocks(spec: &AsyncSpec, n_agents: usize, n_steps: usize, seed: u64, replication: u32) -> Result<Vec<Vec<bool>>> {
    let mut clocks = PoissonClocks::new(spec, n_agents, seed, replication)?;
    let mut sched = vec![Vec::with_capacity(n_steps); n_agents];
    let mut buf = vec![false; n_agents];
    for _ in 0..n_steps {
        clocks.tick(&mut buf);
        for (row, &b) in sched.iter_mut().zip(&buf) {
            row.push(b);
        }
    }
    Ok(sched)
}

/// Output of the read phase for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub features: Vec<f64>,
    pub forecast: f64,
    pub choice: PositionChoice,
}

impl Agent {
    /// Read phase: encode the shared snapshot, forecast and size a position.
    pub fn decide(&self, s: &[f64], sigma2: f64, kappa: f64, activation: Activation) -> Decision {
        let mut features = vec![0.0; self.state.n_features()];
        encode_into(&self.state.w, s, activation, &mut features);
        let r_hat = forecast(&self.state.theta, &features);
        let choice = choose_position(&self.state, &self.params, r_hat, sigma2, kappa);
        Decision { features, forecast: r_hat, choice }
    }

    /// Write phase: adopt the decision and cache what the readout update needs.
    pub fn commit(&mut self, d: Decision) {
        let st = &mut self.state;
        st.last_lambda_hat = st.lambda_hat;
        st.last_forecast = d.forecast;
        st.last_trade = d.choice.trade;
        st.position = d.choice.position;
        st.last_features.as_mut_slice().copy_from_slice(&d.features);
        st.pending = true;
    }

    /// Skip this period: hold the position, no trade.
    pub fn hold(&mut self) {
        self.state.last_trade = 0.0;
    }

    /// Write phase after prices. The return just priced is the one earned by
    /// the previous decision, so that decision's readout update runs first;
    /// then this period's decision is adopted and its slippage observed.
    pub fn settle(&mut self, realized_ret: f64, decision: Option<Decision>) {
        if self.state.pending {
            learn(&mut self.state, &self.params, realized_ret);
            self.state.pending = false;
        }
        match decision {
            Some(d) => {
                self.commit(d);
                update_slippage(&mut self.state, realized_ret, &self.params);
            }
            None => self.hold(),
        }
    }
}

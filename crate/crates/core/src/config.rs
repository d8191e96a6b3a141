//! Experiment configuration: JSON-backed declarations of channel, cost,
//! agent, and run parameters, with defaults, validation, stable hashing,
//! and deterministic construction of simulator pieces.
//!
//! Reproducibility contract: every replication derives a run seed from the
//! master seed, and each run splits into fixed named substreams (forward
//! channel, feedback channel, agent actions), so results are independent of
//! thread scheduling and replication order.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{Agent, BaselinePolicy, Channel, Environment};
use crate::channel::{
    derive_run_seed, eta_from_rho, stream_rng, DelayProcess, GilbertElliotDelay,
    LognormalMarkovDelay, TwoWayDelayProcess,
};
use crate::cost::{AgeCharge, CostModel, PenaltyFunction};
use crate::policy::{ActionRole, FourierFeatures, StochasticPolicy, ValueFunction};

/// Substream identifiers hung off each run seed.
pub const STREAM_FORWARD: u64 = 0;
pub const STREAM_FEEDBACK: u64 = 1;
pub const STREAM_AGENT: u64 = 2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("config does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config could not be assembled: {0}")]
    Build(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

/// Delay process declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelConfig {
    /// Markov-modulated lognormal delays; `rho` is the correlation label
    /// mapped to the latent autoregression via eta = ln(1 + rho(e - 1)).
    Lognormal {
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_sigma_d")]
        sigma_d: f64,
        #[serde(default = "default_mean_scale")]
        mean_scale: f64,
    },
    /// Two-state chain with fixed per-state delays.
    GilbertElliot { p: f64, q: f64, y0: f64, y1: f64 },
}

fn default_rho() -> f64 {
    0.5
}
fn default_sigma_d() -> f64 {
    1.5
}
fn default_mean_scale() -> f64 {
    1.0
}

impl ChannelConfig {
    fn validate(&self, field: &'static str) -> Result<(), ConfigError> {
        match self {
            ChannelConfig::Lognormal { rho, sigma_d, mean_scale } => {
                if !(0.0..=1.0).contains(rho) {
                    return Err(invalid(field, format!("rho {rho} outside [0, 1]")));
                }
                if !(*sigma_d > 0.0 && sigma_d.is_finite()) {
                    return Err(invalid(field, format!("sigma_d {sigma_d} must be > 0")));
                }
                if !(*mean_scale > 0.0 && mean_scale.is_finite()) {
                    return Err(invalid(field, format!("mean_scale {mean_scale} must be > 0")));
                }
            }
            ChannelConfig::GilbertElliot { p, q, y0, y1 } => {
                if !(0.0..=1.0).contains(p) || !(0.0..=1.0).contains(q) {
                    return Err(invalid(field, "p and q must be in [0, 1]"));
                }
                if !(*y0 >= 0.0 && *y1 > *y0 && y1.is_finite()) {
                    return Err(invalid(field, "delays must satisfy 0 <= y0 < y1"));
                }
            }
        }
        Ok(())
    }

    /// Long-run mean of the emitted delay (lognormal delays are normalized
    /// to their scale; the two-state chain averages over its occupancy).
    pub fn stationary_mean_delay(&self) -> f64 {
        match self {
            ChannelConfig::Lognormal { mean_scale, .. } => *mean_scale,
            ChannelConfig::GilbertElliot { p, q, y0, y1 } => {
                if p + q == 0.0 {
                    *y0
                } else {
                    (q * y0 + p * y1) / (p + q)
                }
            }
        }
    }

    /// Instantiates the delay process on the given stream.
    pub fn build(&self, rng: ChaCha8Rng) -> Result<Box<dyn DelayProcess>, ConfigError> {
        match self {
            ChannelConfig::Lognormal { rho, sigma_d, mean_scale } => {
                let eta = eta_from_rho(*rho).map_err(|e| ConfigError::Build(e.to_string()))?;
                let process = LognormalMarkovDelay::new(*sigma_d, eta, *mean_scale, rng)
                    .map_err(|e| ConfigError::Build(e.to_string()))?;
                Ok(Box::new(process))
            }
            ChannelConfig::GilbertElliot { p, q, y0, y1 } => {
                let process = GilbertElliotDelay::new(*p, *q, *y0, *y1, rng)
                    .map_err(|e| ConfigError::Build(e.to_string()))?;
                Ok(Box::new(process))
            }
        }
    }
}

/// Delivery-cost declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostConfig {
    /// Integral of a penalty of the age over each delivery interval.
    Penalty {
        penalty: PenaltyFunction,
        #[serde(default)]
        transmission_cost: f64,
    },
    /// Unit charge when the age peak exceeds a threshold.
    PeakViolation {
        threshold: f64,
        #[serde(default)]
        transmission_cost: f64,
    },
}

impl CostConfig {
    pub fn transmission_cost(&self) -> f64 {
        match self {
            CostConfig::Penalty { transmission_cost, .. }
            | CostConfig::PeakViolation { transmission_cost, .. } => *transmission_cost,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let fee = self.transmission_cost();
        if !(fee >= 0.0 && fee.is_finite()) {
            return Err(invalid("cost.transmission_cost", format!("{fee} must be >= 0")));
        }
        match self {
            CostConfig::Penalty { penalty, .. } => {
                penalty.validate().map_err(|e| invalid("cost.penalty", e.to_string()))
            }
            CostConfig::PeakViolation { threshold, .. } => {
                if *threshold > 0.0 && threshold.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("cost.threshold", format!("{threshold} must be > 0")))
                }
            }
        }
    }

    fn build(&self) -> Result<CostModel, ConfigError> {
        let charge = match self {
            CostConfig::Penalty { penalty, .. } => AgeCharge::Penalty { penalty: *penalty },
            CostConfig::PeakViolation { threshold, .. } => {
                AgeCharge::PeakViolation { threshold: *threshold }
            }
        };
        CostModel::new(charge, self.transmission_cost())
            .map_err(|e| ConfigError::Build(e.to_string()))
    }
}

/// Which decision rule runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Wait,
    Discard,
    Combined,
    ZeroWait,
    MaximumDelay,
}

impl Algorithm {
    pub fn is_learner(self) -> bool {
        matches!(self, Algorithm::Wait | Algorithm::Discard | Algorithm::Combined)
    }

    /// Whether the algorithm carries a cancellation-threshold policy.
    pub fn uses_discard(self) -> bool {
        matches!(self, Algorithm::Discard | Algorithm::Combined)
    }
}

/// Agent declaration: algorithm, action bounds, learning rates, and the
/// cosine-basis dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    /// Upper bound of the waiting action.
    #[serde(default = "default_action_bound")]
    pub z_max: f64,
    /// Cancellation-threshold support.
    #[serde(default = "default_x_min")]
    pub x_min: f64,
    #[serde(default = "default_action_bound")]
    pub x_max: f64,
    #[serde(default = "default_alpha_theta")]
    pub alpha_theta: f64,
    #[serde(default = "default_alpha_omega")]
    pub alpha_omega: f64,
    /// Latent standard deviation of the stochastic policies.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Cosine terms of the policy mean (per state dimension).
    #[serde(default = "default_terms")]
    pub policy_terms: usize,
    /// Cosine terms of the critic.
    #[serde(default = "default_terms")]
    pub critic_terms: usize,
    /// Feature-domain edge for the delivered-delay coordinate.
    #[serde(default = "default_action_bound")]
    pub y_max: f64,
    /// Second-coordinate basis size and edge, used only with a feedback
    /// channel.
    #[serde(default = "default_terms")]
    pub feedback_terms: usize,
    #[serde(default = "default_action_bound")]
    pub feedback_y_max: f64,
}

fn default_action_bound() -> f64 {
    10.0
}
fn default_x_min() -> f64 {
    2.0
}
fn default_alpha_theta() -> f64 {
    1e-4
}
fn default_alpha_omega() -> f64 {
    1e-3
}
fn default_sigma() -> f64 {
    0.5
}
fn default_terms() -> usize {
    10
}

impl AgentConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("{v} must be finite and > 0")))
            }
        };
        positive("agent.z_max", self.z_max)?;
        positive("agent.x_min", self.x_min)?;
        positive("agent.x_max", self.x_max)?;
        positive("agent.sigma", self.sigma)?;
        positive("agent.y_max", self.y_max)?;
        positive("agent.feedback_y_max", self.feedback_y_max)?;
        // The cancellation support only binds algorithms that cancel.
        if self.algorithm.uses_discard() {
            if self.x_min >= self.x_max {
                return Err(invalid("agent.x_min", "must be strictly below x_max"));
            }
            if self.x_max > self.y_max {
                return Err(invalid("agent.x_max", "must not exceed y_max"));
            }
        }
        for (field, rate) in
            [("agent.alpha_theta", self.alpha_theta), ("agent.alpha_omega", self.alpha_omega)]
        {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(invalid(field, format!("{rate} must be finite and >= 0")));
            }
        }
        for (field, terms) in [
            ("agent.policy_terms", self.policy_terms),
            ("agent.critic_terms", self.critic_terms),
            ("agent.feedback_terms", self.feedback_terms),
        ] {
            if terms == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Run-control declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Total simulated time per replication, in the delay time unit.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Record one trajectory sample every this many steps.
    #[serde(default = "default_decimation")]
    pub record_decimation: u64,
    /// Present makes the channel two-way: acknowledgments return through
    /// this process and the state gains a feedback-delay coordinate.
    #[serde(default)]
    pub feedback_channel: Option<ChannelConfig>,
}

fn default_horizon() -> f64 {
    1e6
}
fn default_replications() -> usize {
    100
}
fn default_decimation() -> u64 {
    100
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            replications: default_replications(),
            master_seed: 0,
            record_decimation: default_decimation(),
            feedback_channel: None,
        }
    }
}

/// Sweep declaration: rerun the experiment across values of one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Rho,
    TransmissionCost,
    BackwardMean,
}

/// A full experiment: everything needed to reproduce a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub channel: ChannelConfig,
    pub cost: CostConfig,
    pub agent: AgentConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.channel.validate("channel")?;
        self.cost.validate()?;
        self.agent.validate()?;
        if let Some(feedback) = &self.sim.feedback_channel {
            feedback.validate("sim.feedback_channel")?;
        }
        if !(self.sim.horizon >= 0.0 && self.sim.horizon.is_finite()) {
            return Err(invalid("sim.horizon", "must be finite and >= 0"));
        }
        if self.sim.replications == 0 {
            return Err(invalid("sim.replications", "must be at least 1"));
        }
        if self.sim.record_decimation == 0 {
            return Err(invalid("sim.record_decimation", "must be at least 1"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(invalid("sweep.values", "must not be empty"));
            }
            for &value in &sweep.values {
                self.with_sweep_value(sweep.axis, value)?;
            }
        }
        Ok(())
    }

    /// A copy of this experiment with the sweep axis pinned to `value` and
    /// the sweep declaration removed.
    pub fn with_sweep_value(
        &self,
        axis: SweepAxis,
        value: f64,
    ) -> Result<ExperimentConfig, ConfigError> {
        let mut pinned = self.clone();
        pinned.sweep = None;
        match axis {
            SweepAxis::Rho => match &mut pinned.channel {
                ChannelConfig::Lognormal { rho, .. } => *rho = value,
                ChannelConfig::GilbertElliot { .. } => {
                    return Err(invalid("sweep.axis", "rho sweep needs a lognormal channel"));
                }
            },
            SweepAxis::TransmissionCost => match &mut pinned.cost {
                CostConfig::Penalty { transmission_cost, .. }
                | CostConfig::PeakViolation { transmission_cost, .. } => {
                    *transmission_cost = value;
                }
            },
            SweepAxis::BackwardMean => match &mut pinned.sim.feedback_channel {
                Some(ChannelConfig::Lognormal { mean_scale, .. }) => *mean_scale = value,
                _ => {
                    return Err(invalid(
                        "sweep.axis",
                        "backward_mean sweep needs a lognormal feedback channel",
                    ));
                }
            },
        }
        pinned.validate()?;
        Ok(pinned)
    }

    pub fn is_two_way(&self) -> bool {
        self.sim.feedback_channel.is_some()
    }

    /// Canonical JSON with every default made explicit.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the resolved JSON; names output
    /// directories and ties CSVs to the exact configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.resolved_json().as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    /// Per-replication seed, derived so runs are independent of scheduling.
    pub fn run_seed(&self, run_index: u64) -> u64 {
        derive_run_seed(self.sim.master_seed, run_index)
    }

    pub fn build_environment(&self, run_seed: u64) -> Result<Environment, ConfigError> {
        let forward = self.channel.build(stream_rng(run_seed, STREAM_FORWARD))?;
        let channel = match &self.sim.feedback_channel {
            Some(feedback) => Channel::TwoWay(TwoWayDelayProcess::new(
                forward,
                feedback.build(stream_rng(run_seed, STREAM_FEEDBACK))?,
            )),
            None => Channel::OneWay(forward),
        };
        Ok(Environment::new(channel, self.cost.build()?))
    }

    fn state_features(&self, terms: usize) -> Result<FourierFeatures, ConfigError> {
        let features = if self.is_two_way() {
            FourierFeatures::grid(
                (terms, self.agent.feedback_terms),
                (self.agent.y_max, self.agent.feedback_y_max),
            )
        } else {
            FourierFeatures::line(terms, self.agent.y_max)
        };
        features.map_err(|e| ConfigError::Build(e.to_string()))
    }

    fn wait_policy(&self) -> Result<StochasticPolicy, ConfigError> {
        StochasticPolicy::new(
            self.state_features(self.agent.policy_terms)?,
            self.agent.sigma,
            0.0,
            self.agent.z_max,
            ActionRole::Wait,
        )
        .map_err(|e| ConfigError::Build(e.to_string()))
    }

    fn discard_policy(&self) -> Result<StochasticPolicy, ConfigError> {
        StochasticPolicy::new(
            self.state_features(self.agent.policy_terms)?,
            self.agent.sigma,
            self.agent.x_min,
            self.agent.x_max,
            ActionRole::Discard,
        )
        .map_err(|e| ConfigError::Build(e.to_string()))
    }

    fn critic(&self) -> Result<ValueFunction, ConfigError> {
        Ok(ValueFunction::new(self.state_features(self.agent.critic_terms)?))
    }

    pub fn build_agent(&self, run_seed: u64) -> Result<Agent, ConfigError> {
        let rng = stream_rng(run_seed, STREAM_AGENT);
        let agent = match self.agent.algorithm {
            Algorithm::Wait => {
                Agent::wait_learner(self.wait_policy()?, self.agent.alpha_theta, rng)
            }
            Algorithm::Discard => Agent::discard_learner(
                self.discard_policy()?,
                self.critic()?,
                self.agent.alpha_theta,
                self.agent.alpha_omega,
                rng,
            ),
            Algorithm::Combined => Agent::combined_learner(
                self.wait_policy()?,
                self.discard_policy()?,
                self.critic()?,
                self.agent.alpha_theta,
                self.agent.alpha_omega,
                rng,
            ),
            Algorithm::ZeroWait => Agent::baseline(BaselinePolicy::ZeroWait, rng),
            Algorithm::MaximumDelay => Agent::baseline(
                BaselinePolicy::MaximumDelay { threshold: self.agent.y_max },
                rng,
            ),
        };
        agent.map_err(|e| ConfigError::Build(e.to_string()))
    }
}

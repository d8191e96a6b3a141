//! Learning agents and fixed-action baselines.
//!
//! Every agent runs the same per-delivery loop: pick actions from the
//! current state, transmit (cancelling and retrying while attempt delays
//! exceed the cancellation threshold), observe the delivered delay and the
//! age cost fed back by the environment, update the long-run cost and time
//! accumulators, and — for learners — nudge the policy (and critic) weights
//! along the eligibility direction scaled by a differential-return error.
//!
//! Update order is load-bearing: the error signal uses the cost accumulator
//! *after* adding the current delivery and the time accumulator *before*
//! adding the current span, and weight updates happen before the clock
//! advances. Tests pin this order by reconstructing the error from observed
//! weight changes.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{DelayProcess, TwoWayDelayProcess};
use crate::cost::{CostError, CostModel, DeliveryRecord};
use crate::numeric::CompensatedSum;
use crate::policy::{ActionRole, PolicyError, State, StochasticPolicy, ValueFunction};

/// Abort threshold for the per-step error signal; beyond this the run is
/// considered numerically divergent.
pub const DELTA_ABORT: f64 = 1e12;

/// Cancelled-transmission cap per delivery; hitting it means the threshold
/// sits below every delay the channel can produce.
pub const ATTEMPT_CAP: u32 = 1_000_000;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent stepped before bootstrap")]
    NotBootstrapped,
    #[error("agent bootstrapped twice")]
    AlreadyBootstrapped,
    #[error("update signal diverged (delta = {delta})")]
    DeltaDiverged { delta: f64 },
    #[error("no delivery within {cap} transmissions; threshold {threshold} is below every achievable delay")]
    AttemptCapExceeded { threshold: f64, cap: u32 },
    #[error("agent construction failed: {0}")]
    InvalidConstruction(&'static str),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Forward-only or forward+feedback delay source.
pub enum Channel {
    OneWay(Box<dyn DelayProcess>),
    TwoWay(TwoWayDelayProcess),
}

/// Everything outside the agent's control: the channel and the cost model.
/// Agents see only opaque delay and cost numbers through this interface.
pub struct Environment {
    channel: Channel,
    cost: CostModel,
}

impl Environment {
    pub fn new(channel: Channel, cost: CostModel) -> Self {
        Self { channel, cost }
    }

    pub fn is_two_way(&self) -> bool {
        matches!(self.channel, Channel::TwoWay(_))
    }

    pub fn transmission_cost(&self) -> f64 {
        self.cost.transmission_cost()
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    fn next_forward(&mut self) -> f64 {
        match &mut self.channel {
            Channel::OneWay(p) => p.next_delay(),
            Channel::TwoWay(t) => t.next_forward(),
        }
    }

    fn next_feedback(&mut self) -> Option<f64> {
        match &mut self.channel {
            Channel::OneWay(_) => None,
            Channel::TwoWay(t) => Some(t.next_backward()),
        }
    }

    fn age_cost(&self, prev_delay: f64, elapsed: f64, attempts: u32) -> Result<f64, CostError> {
        self.cost.age_cost(&DeliveryRecord { prev_delay, elapsed, attempts })
    }
}

/// Fixed decision rules used for comparison runs and oracle validation.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselinePolicy {
    /// Retransmit immediately after every delivery, never cancel.
    ZeroWait,
    /// Never wait; cancel any transmission slower than `threshold` (used
    /// with the feature-domain edge as threshold, this is the
    /// "maximum-delay" rule).
    MaximumDelay { threshold: f64 },
    /// Per-state waiting times, matched by nearest tabulated state.
    FixedWaitTable { entries: Vec<(f64, f64)> },
    /// Per-state cancellation thresholds, matched by nearest tabulated state.
    FixedDiscardTable { entries: Vec<(f64, f64)> },
}

impl BaselinePolicy {
    fn validate(&self) -> Result<(), AgentError> {
        let check_table = |entries: &[(f64, f64)], positive_action: bool| {
            if entries.is_empty() {
                return Err(AgentError::InvalidConstruction("baseline table must not be empty"));
            }
            for &(s, a) in entries {
                if !s.is_finite() || !a.is_finite() || a < 0.0 || (positive_action && a <= 0.0) {
                    return Err(AgentError::InvalidConstruction("baseline table entry out of range"));
                }
            }
            Ok(())
        };
        match self {
            BaselinePolicy::ZeroWait => Ok(()),
            BaselinePolicy::MaximumDelay { threshold } => {
                if *threshold > 0.0 && threshold.is_finite() {
                    Ok(())
                } else {
                    Err(AgentError::InvalidConstruction("maximum-delay threshold must be > 0"))
                }
            }
            BaselinePolicy::FixedWaitTable { entries } => check_table(entries, false),
            BaselinePolicy::FixedDiscardTable { entries } => check_table(entries, true),
        }
    }
}

fn table_lookup(entries: &[(f64, f64)], delay: f64) -> f64 {
    entries
        .iter()
        .min_by(|a, b| (a.0 - delay).abs().total_cmp(&(b.0 - delay).abs()))
        .map(|&(_, action)| action)
        .expect("table validated non-empty")
}

enum Mode {
    Wait { policy: StochasticPolicy },
    Discard { policy: StochasticPolicy, critic: ValueFunction },
    Combined { wait: StochasticPolicy, discard: StochasticPolicy, critic: ValueFunction },
    Baseline(BaselinePolicy),
}

/// What one delivery step looked like from the outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Waiting time applied before the first transmission of this step.
    pub wait: f64,
    /// Cancellation threshold in effect (infinite when never cancelling).
    pub threshold: f64,
    /// Transmissions consumed, cancelled attempts included.
    pub attempts: u32,
    /// Delay of the delivered transmission (the next state's delay).
    pub delivered_delay: f64,
    /// Wall-clock span of the step.
    pub elapsed: f64,
    /// Age component of the delivery cost fed back by the environment.
    pub age_cost: f64,
}

struct Decision {
    wait: f64,
    threshold: f64,
    updatable: bool,
}

/// A source-side controller with long-run cost bookkeeping.
///
/// The elapsed-time accumulator starts at one (not zero) so the average-cost
/// estimate is defined from the first step; the bias this adds vanishes as
/// the horizon grows.
pub struct Agent {
    mode: Mode,
    policy_rate: f64,
    critic_rate: f64,
    cost_total: CompensatedSum,
    time_total: CompensatedSum,
    state: Option<State>,
    rng: ChaCha8Rng,
}

impl Agent {
    /// Wait-only policy-gradient learner (no critic).
    pub fn wait_learner(
        policy: StochasticPolicy,
        policy_rate: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self, AgentError> {
        if policy.role() != ActionRole::Wait {
            return Err(AgentError::InvalidConstruction("wait learner needs a wait-role policy"));
        }
        check_rate(policy_rate)?;
        Ok(Self::from_mode(Mode::Wait { policy }, policy_rate, 0.0, rng))
    }

    /// Discard-threshold actor-critic learner.
    pub fn discard_learner(
        policy: StochasticPolicy,
        critic: ValueFunction,
        policy_rate: f64,
        critic_rate: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self, AgentError> {
        if policy.role() != ActionRole::Discard {
            return Err(AgentError::InvalidConstruction("discard learner needs a discard-role policy"));
        }
        check_rate(policy_rate)?;
        check_rate(critic_rate)?;
        Ok(Self::from_mode(Mode::Discard { policy, critic }, policy_rate, critic_rate, rng))
    }

    /// Combined learner: wait and discard policies updated from a shared
    /// error signal, plus a critic.
    pub fn combined_learner(
        wait: StochasticPolicy,
        discard: StochasticPolicy,
        critic: ValueFunction,
        policy_rate: f64,
        critic_rate: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self, AgentError> {
        if wait.role() != ActionRole::Wait || discard.role() != ActionRole::Discard {
            return Err(AgentError::InvalidConstruction("combined learner needs one policy per role"));
        }
        check_rate(policy_rate)?;
        check_rate(critic_rate)?;
        Ok(Self::from_mode(
            Mode::Combined { wait, discard, critic },
            policy_rate,
            critic_rate,
            rng,
        ))
    }

    /// Fixed-action baseline; interacts and accounts exactly like a learner
    /// but never updates anything.
    pub fn baseline(policy: BaselinePolicy, rng: ChaCha8Rng) -> Result<Self, AgentError> {
        policy.validate()?;
        Ok(Self::from_mode(Mode::Baseline(policy), 0.0, 0.0, rng))
    }

    fn from_mode(mode: Mode, policy_rate: f64, critic_rate: f64, rng: ChaCha8Rng) -> Self {
        Self {
            mode,
            policy_rate,
            critic_rate,
            cost_total: CompensatedSum::new(0.0),
            time_total: CompensatedSum::new(1.0),
            state: None,
            rng,
        }
    }

    pub fn cost_total(&self) -> f64 {
        self.cost_total.value()
    }

    pub fn time_total(&self) -> f64 {
        self.time_total.value()
    }

    /// Long-run average-cost estimate: accumulated cost over accumulated
    /// time.
    pub fn average_cost(&self) -> f64 {
        self.cost_total.value() / self.time_total.value()
    }

    pub fn state(&self) -> Option<State> {
        self.state
    }

    pub fn wait_policy(&self) -> Option<&StochasticPolicy> {
        match &self.mode {
            Mode::Wait { policy } => Some(policy),
            Mode::Combined { wait, .. } => Some(wait),
            _ => None,
        }
    }

    pub fn discard_policy(&self) -> Option<&StochasticPolicy> {
        match &self.mode {
            Mode::Discard { policy, .. } => Some(policy),
            Mode::Combined { discard, .. } => Some(discard),
            _ => None,
        }
    }

    pub fn critic(&self) -> Option<&ValueFunction> {
        match &self.mode {
            Mode::Discard { critic, .. } | Mode::Combined { critic, .. } => Some(critic),
            _ => None,
        }
    }

    pub fn is_learner(&self) -> bool {
        !matches!(self.mode, Mode::Baseline(_))
    }

    /// Establishes the initial state with one throwaway delivery under the
    /// null action (no waiting; discard modes cancel only past their upper
    /// action bound). No cost or time is accounted: the accumulators still
    /// read zero cost over unit time afterwards.
    pub fn bootstrap(&mut self, env: &mut Environment) -> Result<(), AgentError> {
        if self.state.is_some() {
            return Err(AgentError::AlreadyBootstrapped);
        }
        let threshold = match &self.mode {
            Mode::Discard { policy, .. } => policy.action_max(),
            Mode::Combined { discard, .. } => discard.action_max(),
            Mode::Baseline(BaselinePolicy::MaximumDelay { threshold }) => *threshold,
            _ => f64::INFINITY,
        };
        let (_, delivered) = transmit_until_delivered(env, threshold)?;
        self.state = Some(State { delay: delivered, feedback_delay: env.next_feedback() });
        Ok(())
    }

    /// Runs one delivery cycle and, for learners, one gradient update.
    pub fn step(&mut self, env: &mut Environment) -> Result<StepOutcome, AgentError> {
        let state = self.state.ok_or(AgentError::NotBootstrapped)?;
        let decision = self.decide(state)?;

        let (attempts, delivered) = transmit_until_delivered(env, decision.threshold)?;
        let cancelled_time =
            if attempts > 1 { (attempts - 1) as f64 * decision.threshold } else { 0.0 };
        let elapsed =
            state.feedback_delay.unwrap_or(0.0) + decision.wait + cancelled_time + delivered;

        let age_cost = env.age_cost(state.delay, elapsed, attempts)?;
        let fee = attempts as f64 * env.transmission_cost();
        self.cost_total.add(fee + age_cost);

        // The feedback delay of this delivery is drawn now; by the time the
        // update below would physically run (when the acknowledgment
        // arrives) it is known, so it is part of the successor state.
        let next_state = State { delay: delivered, feedback_delay: env.next_feedback() };

        if self.is_learner() {
            let v_cur = match self.critic() {
                Some(c) => c.value(state)?,
                None => 0.0,
            };
            let v_next = match self.critic() {
                Some(c) => c.value(next_state)?,
                None => 0.0,
            };
            // Differential return of this step against the running average:
            // cost accumulator after this delivery, clock before it.
            let rate_estimate = self.cost_total.value() / self.time_total.value();
            let delta = -fee - age_cost + elapsed * rate_estimate + v_next - v_cur;
            if !delta.is_finite() || delta.abs() > DELTA_ABORT {
                return Err(AgentError::DeltaDiverged { delta });
            }
            if decision.updatable {
                let (policy_rate, critic_rate) = (self.policy_rate, self.critic_rate);
                match &mut self.mode {
                    Mode::Wait { policy } => {
                        let elig = policy.eligibility(state, decision.wait)?;
                        policy.update(delta, policy_rate, &elig)?;
                    }
                    Mode::Discard { policy, critic } => {
                        let elig = policy.eligibility(state, decision.threshold)?;
                        policy.update(delta, policy_rate, &elig)?;
                        critic.update(delta, critic_rate, state)?;
                    }
                    Mode::Combined { wait, discard, critic } => {
                        let elig_w = wait.eligibility(state, decision.wait)?;
                        wait.update(delta, policy_rate, &elig_w)?;
                        let elig_d = discard.eligibility(state, decision.threshold)?;
                        discard.update(delta, policy_rate, &elig_d)?;
                        critic.update(delta, critic_rate, state)?;
                    }
                    Mode::Baseline(_) => unreachable!("baselines are not learners"),
                }
            }
        }

        self.time_total.add(elapsed);
        self.state = Some(next_state);

        Ok(StepOutcome {
            wait: decision.wait,
            threshold: decision.threshold,
            attempts,
            delivered_delay: delivered,
            elapsed,
            age_cost,
        })
    }

    fn decide(&mut self, state: State) -> Result<Decision, AgentError> {
        let Self { mode, rng, .. } = self;
        Ok(match mode {
            Mode::Wait { policy } => {
                let s = policy.sample_action(state, rng)?;
                Decision { wait: s.action, threshold: f64::INFINITY, updatable: !s.fixed }
            }
            Mode::Discard { policy, .. } => {
                let s = policy.sample_action(state, rng)?;
                Decision { wait: 0.0, threshold: s.action, updatable: !s.fixed }
            }
            Mode::Combined { wait, discard, .. } => {
                let sw = wait.sample_action(state, rng)?;
                let sd = discard.sample_action(state, rng)?;
                // Both policies see the same state, so they fall back together.
                Decision {
                    wait: sw.action,
                    threshold: sd.action,
                    updatable: !sw.fixed && !sd.fixed,
                }
            }
            Mode::Baseline(b) => {
                let (wait, threshold) = match b {
                    BaselinePolicy::ZeroWait => (0.0, f64::INFINITY),
                    BaselinePolicy::MaximumDelay { threshold } => (0.0, *threshold),
                    BaselinePolicy::FixedWaitTable { entries } => {
                        (table_lookup(entries, state.delay), f64::INFINITY)
                    }
                    BaselinePolicy::FixedDiscardTable { entries } => {
                        (0.0, table_lookup(entries, state.delay))
                    }
                };
                Decision { wait, threshold, updatable: false }
            }
        })
    }

    #[cfg(test)]
    fn preset(&mut self, cost: f64, time: f64, state: State) {
        self.cost_total = CompensatedSum::new(cost);
        self.time_total = CompensatedSum::new(time);
        self.state = Some(state);
    }
}

fn check_rate(rate: f64) -> Result<(), AgentError> {
    if rate >= 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(AgentError::InvalidConstruction("learning rates must be finite and >= 0"))
    }
}

fn transmit_until_delivered(
    env: &mut Environment,
    threshold: f64,
) -> Result<(u32, f64), AgentError> {
    let mut attempts: u32 = 1;
    loop {
        let delay = env.next_forward();
        if delay <= threshold {
            return Ok((attempts, delay));
        }
        attempts += 1;
        if attempts > ATTEMPT_CAP {
            return Err(AgentError::AttemptCapExceeded { threshold, cap: ATTEMPT_CAP });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{GilbertElliotDelay, LognormalMarkovDelay};
    use crate::cost::{AgeCharge, PenaltyFunction};
    use crate::policy::FourierFeatures;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn identity_env(channel: Channel, fee: f64) -> Environment {
        let cost =
            CostModel::new(AgeCharge::Penalty { penalty: PenaltyFunction::Identity }, fee).unwrap();
        Environment::new(channel, cost)
    }

    fn constant_channel(delay: f64) -> Channel {
        // Frozen two-state chain pinned to state 0: emits `delay` forever.
        Channel::OneWay(Box::new(
            GilbertElliotDelay::with_initial_state(0.0, 0.0, delay, delay + 1.0, 0, rng(99)).unwrap(),
        ))
    }

    fn wait_policy(bound: f64, z_max: f64) -> StochasticPolicy {
        StochasticPolicy::new(
            FourierFeatures::line(4, bound).unwrap(),
            0.5,
            0.0,
            z_max,
            ActionRole::Wait,
        )
        .unwrap()
    }

    fn discard_policy(bound: f64, x_min: f64, x_max: f64) -> StochasticPolicy {
        StochasticPolicy::new(
            FourierFeatures::line(4, bound).unwrap(),
            0.5,
            x_min,
            x_max,
            ActionRole::Discard,
        )
        .unwrap()
    }

    fn critic(bound: f64) -> ValueFunction {
        ValueFunction::new(FourierFeatures::line(4, bound).unwrap())
    }

    #[test]
    fn construction_checks_roles_and_rates() {
        let w = wait_policy(2.0, 1.0);
        let d = discard_policy(2.0, 1.0, 3.0);
        assert!(Agent::wait_learner(d.clone(), 1e-4, rng(1)).is_err());
        assert!(Agent::discard_learner(w.clone(), critic(2.0), 1e-4, 1e-3, rng(1)).is_err());
        assert!(Agent::combined_learner(d.clone(), w.clone(), critic(2.0), 1e-4, 1e-3, rng(1))
            .is_err());
        assert!(Agent::wait_learner(w.clone(), f64::NAN, rng(1)).is_err());
        assert!(Agent::wait_learner(w, -1.0, rng(1)).is_err());
        assert!(Agent::baseline(BaselinePolicy::FixedWaitTable { entries: vec![] }, rng(1)).is_err());
        assert!(
            Agent::baseline(BaselinePolicy::MaximumDelay { threshold: 0.0 }, rng(1)).is_err()
        );
    }

    #[test]
    fn step_requires_bootstrap_and_bootstrap_is_single() {
        let mut env = identity_env(constant_channel(1.0), 1.0);
        let mut agent = Agent::wait_learner(wait_policy(2.0, 1.0), 1e-4, rng(2)).unwrap();
        assert!(matches!(agent.step(&mut env), Err(AgentError::NotBootstrapped)));
        agent.bootstrap(&mut env).unwrap();
        assert_eq!(agent.cost_total(), 0.0);
        assert_eq!(agent.time_total(), 1.0);
        assert_eq!(agent.state().unwrap().delay, 1.0);
        assert!(matches!(agent.bootstrap(&mut env), Err(AgentError::AlreadyBootstrapped)));
    }

    #[test]
    fn zero_cost_world_never_moves_the_weights() {
        // Huge violation threshold and no fee: every delivery is free, so
        // the error signal is exactly zero and the weights stay put.
        let cost = CostModel::new(AgeCharge::PeakViolation { threshold: 1e9 }, 0.0).unwrap();
        let lognormal = LognormalMarkovDelay::new(1.5, 0.5, 1.0, rng(3)).unwrap();
        let mut env = Environment::new(Channel::OneWay(Box::new(lognormal)), cost);
        let mut agent = Agent::wait_learner(wait_policy(50.0, 1.0), 1e-2, rng(4)).unwrap();
        agent.bootstrap(&mut env).unwrap();
        for _ in 0..200 {
            agent.step(&mut env).unwrap();
        }
        assert!(agent.wait_policy().unwrap().weights().iter().all(|&w| w == 0.0));
        assert_eq!(agent.cost_total(), 0.0);
        assert_eq!(agent.average_cost(), 0.0);
    }

    #[test]
    fn error_signal_direct_example() {
        // Deterministic unit delay, fee 1, identity penalty. Preset the
        // accumulators so that after adding this delivery's cost the
        // estimate times the span exactly cancels the delivery cost:
        // prev delay 0.5, span 1 -> age cost 1, fee 1, cost 8 + 2 = 10,
        // error = -2 + 1 * 10/5 = 0, so no weight moves.
        let mut env = identity_env(constant_channel(1.0), 1.0);
        let policy = discard_policy(2.0, 1.5, 9.0); // thresholds above 1: never cancels
        let mut agent = Agent::discard_learner(policy, critic(2.0), 0.1, 0.1, rng(5)).unwrap();
        agent.preset(8.0, 5.0, State::one_way(0.5));
        let out = agent.step(&mut env).unwrap();
        assert_eq!(out.attempts, 1);
        assert_eq!(out.elapsed, 1.0);
        assert!((out.age_cost - 1.0).abs() < 1e-12);
        assert!(agent.discard_policy().unwrap().weights().iter().all(|&w| w.abs() < 1e-15));
        assert!(agent.critic().unwrap().weights().iter().all(|&w| w.abs() < 1e-15));
        assert!((agent.cost_total() - 10.0).abs() < 1e-12);
        assert!((agent.time_total() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn wait_update_matches_reconstructed_error() {
        let mut env = identity_env(constant_channel(1.0), 1.0);
        let mut agent = Agent::wait_learner(wait_policy(2.0, 1.5), 1e-3, rng(6)).unwrap();
        agent.bootstrap(&mut env).unwrap();
        for _ in 0..5 {
            agent.step(&mut env).unwrap();
        }
        let state = agent.state().unwrap();
        let before = agent.wait_policy().unwrap().clone();
        let cost_before = agent.cost_total();
        let time_before = agent.time_total();
        let out = agent.step(&mut env).unwrap();

        let fee = out.attempts as f64;
        let cost_after = cost_before + fee + out.age_cost;
        let expected_delta = -fee - out.age_cost + out.elapsed * cost_after / time_before;
        let elig = before.eligibility(state, out.wait).unwrap();
        let after = agent.wait_policy().unwrap().weights();
        for (k, (&w_new, &w_old)) in after.iter().zip(before.weights()).enumerate() {
            let expected = w_old + 1e-3 * expected_delta * elig[k];
            assert!(
                (w_new - expected).abs() < 1e-12,
                "weight {k}: got {w_new}, expected {expected}"
            );
        }
        assert!((agent.time_total() - (time_before + out.elapsed)).abs() < 1e-12);
        assert!((agent.cost_total() - cost_after).abs() < 1e-12);
    }

    #[test]
    fn discard_update_uses_critic_difference() {
        let mut env = identity_env(constant_channel(1.0), 2.0);
        let policy = discard_policy(2.0, 1.5, 9.0);
        let mut agent = Agent::discard_learner(policy, critic(2.0), 1e-3, 1e-2, rng(7)).unwrap();
        agent.bootstrap(&mut env).unwrap();
        // A couple of steps so the critic weights are non-zero.
        for _ in 0..3 {
            agent.step(&mut env).unwrap();
        }
        let state = agent.state().unwrap();
        let policy_before = agent.discard_policy().unwrap().clone();
        let critic_before = agent.critic().unwrap().clone();
        let cost_before = agent.cost_total();
        let time_before = agent.time_total();
        let out = agent.step(&mut env).unwrap();

        let fee = 2.0 * out.attempts as f64;
        let cost_after = cost_before + fee + out.age_cost;
        let next_state = State::one_way(out.delivered_delay);
        let expected_delta = -fee - out.age_cost
            + out.elapsed * cost_after / time_before
            + critic_before.value(next_state).unwrap()
            - critic_before.value(state).unwrap();

        let elig = policy_before.eligibility(state, out.threshold).unwrap();
        for (k, (&w_new, &w_old)) in
            agent.discard_policy().unwrap().weights().iter().zip(policy_before.weights()).enumerate()
        {
            assert!((w_new - (w_old + 1e-3 * expected_delta * elig[k])).abs() < 1e-12);
        }
        let grad = critic_before.gradient(state).unwrap();
        for (k, (&w_new, &w_old)) in
            agent.critic().unwrap().weights().iter().zip(critic_before.weights()).enumerate()
        {
            assert!((w_new - (w_old + 1e-2 * expected_delta * grad[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn combined_updates_share_one_error_signal() {
        let mut env = identity_env(constant_channel(1.0), 1.0);
        let mut agent = Agent::combined_learner(
            wait_policy(2.0, 1.5),
            discard_policy(2.0, 1.5, 9.0),
            critic(2.0),
            1e-3,
            1e-2,
            rng(8),
        )
        .unwrap();
        agent.bootstrap(&mut env).unwrap();
        for _ in 0..4 {
            agent.step(&mut env).unwrap();
        }
        let state = agent.state().unwrap();
        let wait_before = agent.wait_policy().unwrap().clone();
        let discard_before = agent.discard_policy().unwrap().clone();
        let critic_before = agent.critic().unwrap().clone();
        let out = agent.step(&mut env).unwrap();

        // Recover the error signal independently from each parameter block;
        // all three must agree.
        let recover = |w_new: &[f64], w_old: &[f64], grad: &[f64], rate: f64| -> f64 {
            let (k, g) = grad
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(k, g)| (k, *g))
                .unwrap();
            (w_new[k] - w_old[k]) / (rate * g)
        };
        let elig_w = wait_before.eligibility(state, out.wait).unwrap();
        let elig_d = discard_before.eligibility(state, out.threshold).unwrap();
        let grad_v = critic_before.gradient(state).unwrap();
        let d1 = recover(agent.wait_policy().unwrap().weights(), wait_before.weights(), &elig_w, 1e-3);
        let d2 =
            recover(agent.discard_policy().unwrap().weights(), discard_before.weights(), &elig_d, 1e-3);
        let d3 = recover(agent.critic().unwrap().weights(), critic_before.weights(), &grad_v, 1e-2);
        assert!((d1 - d2).abs() < 1e-9 * d1.abs().max(1.0), "{d1} vs {d2}");
        assert!((d1 - d3).abs() < 1e-9 * d1.abs().max(1.0), "{d1} vs {d3}");
    }

    #[test]
    fn discard_cancels_slow_attempts() {
        // Alternating chain starting fast: attempt delays 1, 10, 1, 10, ...
        // The bootstrap consumes the first "1"; the step then cancels the
        // "10" at threshold 5 and delivers the next "1".
        let channel = Channel::OneWay(Box::new(
            GilbertElliotDelay::with_initial_state(1.0, 1.0, 1.0, 10.0, 0, rng(9)).unwrap(),
        ));
        let mut env = identity_env(channel, 2.0);
        let table = BaselinePolicy::FixedDiscardTable { entries: vec![(0.0, 5.0)] };
        let mut agent = Agent::baseline(table, rng(10)).unwrap();
        agent.bootstrap(&mut env).unwrap();
        assert_eq!(agent.state().unwrap().delay, 1.0);
        let out = agent.step(&mut env).unwrap();
        assert_eq!(out.attempts, 2);
        assert_eq!(out.delivered_delay, 1.0);
        assert_eq!(out.elapsed, 5.0 + 1.0);
        // Age interval (1, 7]: identity integral (49 - 1) / 2.
        assert!((out.age_cost - 24.0).abs() < 1e-12);
        assert!((agent.cost_total() - (2.0 * 2.0 + 24.0)).abs() < 1e-12);
        assert!((agent.time_total() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_threshold_hits_the_attempt_cap() {
        let mut env = identity_env(constant_channel(1.0), 1.0);
        let table = BaselinePolicy::FixedDiscardTable { entries: vec![(0.0, 0.5)] };
        let mut agent = Agent::baseline(table, rng(11)).unwrap();
        agent.bootstrap(&mut env).unwrap(); // bootstrap never cancels
        assert!(matches!(agent.step(&mut env), Err(AgentError::AttemptCapExceeded { .. })));
    }

    #[test]
    fn out_of_range_state_takes_fixed_action_without_updates() {
        let mut env = identity_env(constant_channel(1.0), 1.0);
        let mut agent = Agent::wait_learner(wait_policy(2.0, 1.5), 1e-2, rng(12)).unwrap();
        agent.preset(3.0, 2.0, State::one_way(2.5));
        let out = agent.step(&mut env).unwrap();
        assert_eq!(out.wait, 0.0);
        assert!(agent.wait_policy().unwrap().weights().iter().all(|&w| w == 0.0));
        // Bookkeeping still advances.
        assert!(agent.time_total() > 2.0);
        assert!(agent.cost_total() > 3.0);

        let mut agent = Agent::discard_learner(
            discard_policy(2.0, 1.5, 9.0),
            critic(2.0),
            1e-2,
            1e-2,
            rng(13),
        )
        .unwrap();
        agent.preset(0.0, 1.0, State::one_way(2.0));
        let out = agent.step(&mut env).unwrap();
        assert_eq!(out.threshold, 9.0);
        assert!(agent.critic().unwrap().weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn combined_with_unreachable_threshold_behaves_like_wait_dynamics() {
        // Discard bounds sit entirely above the only achievable delay, so
        // cancellation never triggers and each step is wait + delivery.
        let mut env = identity_env(constant_channel(1.0), 1.0);
        let mut agent = Agent::combined_learner(
            wait_policy(2.0, 1.5),
            discard_policy(2.0, 2.0, 3.0),
            critic(2.0),
            1e-3,
            1e-3,
            rng(14),
        )
        .unwrap();
        agent.bootstrap(&mut env).unwrap();
        for _ in 0..500 {
            let out = agent.step(&mut env).unwrap();
            assert_eq!(out.attempts, 1);
            assert_eq!(out.elapsed, out.wait + out.delivered_delay);
        }
    }

    #[test]
    fn combined_with_vanishing_wait_behaves_like_discard_dynamics() {
        let channel = Channel::OneWay(Box::new(
            GilbertElliotDelay::with_initial_state(0.3, 0.7, 1.0, 10.0, 0, rng(15)).unwrap(),
        ));
        let mut env = identity_env(channel, 1.0);
        let mut agent = Agent::combined_learner(
            wait_policy(12.0, 1e-9),
            discard_policy(12.0, 2.0, 9.0),
            critic(12.0),
            0.0,
            0.0,
            rng(16),
        )
        .unwrap();
        agent.bootstrap(&mut env).unwrap();
        for _ in 0..500 {
            let out = agent.step(&mut env).unwrap();
            let discard_elapsed =
                (out.attempts - 1) as f64 * out.threshold + out.delivered_delay;
            assert!((out.elapsed - discard_elapsed).abs() <= 1e-9);
        }
    }

    #[test]
    fn baselines_are_deterministic_and_learning_free() {
        let make = || {
            let channel = Channel::OneWay(Box::new(
                GilbertElliotDelay::new(0.2, 0.5, 1.0, 4.0, rng(17)).unwrap(),
            ));
            let mut env = identity_env(channel, 1.0);
            let mut agent = Agent::baseline(BaselinePolicy::ZeroWait, rng(18)).unwrap();
            agent.bootstrap(&mut env).unwrap();
            for _ in 0..1000 {
                let out = agent.step(&mut env).unwrap();
                assert_eq!(out.wait, 0.0);
                assert_eq!(out.attempts, 1);
            }
            (agent.cost_total(), agent.time_total())
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn fixed_wait_table_matches_nearest_state() {
        let channel = Channel::OneWay(Box::new(
            GilbertElliotDelay::with_initial_state(1.0, 1.0, 1.0, 4.0, 0, rng(19)).unwrap(),
        ));
        let mut env = identity_env(channel, 1.0);
        let table =
            BaselinePolicy::FixedWaitTable { entries: vec![(1.0, 0.25), (4.0, 0.75)] };
        let mut agent = Agent::baseline(table, rng(20)).unwrap();
        agent.bootstrap(&mut env).unwrap();
        for _ in 0..10 {
            let state = agent.state().unwrap().delay;
            let out = agent.step(&mut env).unwrap();
            let expected = if (state - 1.0).abs() < (state - 4.0).abs() { 0.25 } else { 0.75 };
            assert_eq!(out.wait, expected);
        }
    }

    #[test]
    fn two_way_steps_include_the_feedback_delay() {
        let forward = GilbertElliotDelay::with_initial_state(0.0, 0.0, 1.0, 2.0, 0, rng(21)).unwrap();
        let backward = GilbertElliotDelay::with_initial_state(0.0, 0.0, 3.0, 4.0, 0, rng(22)).unwrap();
        let two = TwoWayDelayProcess::new(Box::new(forward), Box::new(backward));
        let mut env = identity_env(Channel::TwoWay(two), 0.0);
        let mut agent = Agent::baseline(BaselinePolicy::ZeroWait, rng(23)).unwrap();
        agent.bootstrap(&mut env).unwrap();
        let state = agent.state().unwrap();
        assert_eq!(state.delay, 1.0);
        assert_eq!(state.feedback_delay, Some(3.0));
        for _ in 0..5 {
            let out = agent.step(&mut env).unwrap();
            // Feedback 3 + wait 0 + delivery 1.
            assert_eq!(out.elapsed, 4.0);
        }
    }

    #[test]
    fn bookkeeping_identity_holds_under_compensated_sums() {
        let lognormal = LognormalMarkovDelay::new(1.5, 0.5, 1.0, rng(24)).unwrap();
        let mut env = identity_env(Channel::OneWay(Box::new(lognormal)), 1.0);
        let mut agent = Agent::wait_learner(wait_policy(10.0, 5.0), 1e-4, rng(25)).unwrap();
        agent.bootstrap(&mut env).unwrap();
        let mut independent_cost = CompensatedSum::new(0.0);
        let mut independent_time = CompensatedSum::new(1.0);
        for _ in 0..100_000 {
            let out = agent.step(&mut env).unwrap();
            independent_cost.add(out.attempts as f64 + out.age_cost);
            independent_time.add(out.elapsed);
        }
        let cost = independent_cost.value();
        assert!((agent.average_cost() * agent.time_total() - cost).abs() <= 1e-9 * cost.abs());
        assert!((agent.time_total() - independent_time.value()).abs() <= 1e-9 * independent_time.value());
    }
}

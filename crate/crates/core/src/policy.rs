//! Parametric policies over the delay state, and the linear state-value
//! critic used by the actor-critic agents.
//!
//! The action distribution is a lognormal variable mapped onto a bounded
//! interval: with latent `g ~ N(mu(state), sigma^2)`, the action is
//! `a_max - (a_max - a_min) / (1 + e^g)`. The mean `mu` is a linear
//! combination of cosine features of the (clamped) state, so log-density
//! gradients reduce to a scalar residual times the feature vector.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::numeric::integrate;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// Largest Euclidean distance a single gradient step may move the weights.
///
/// Heavy-tailed age penalties occasionally emit error signals orders of
/// magnitude above typical. An uncapped step can then push the latent mean
/// deep into the squashing function's saturated zone, where the score factor
/// of the next step is proportionally larger — an oscillation that escalates
/// to overflow. Rescaling oversized steps to this norm keeps their direction
/// while bounding the per-step displacement; routine updates are far below
/// the cap and pass through unchanged.
pub const MAX_STEP_NORM: f64 = 0.5;

/// Scale factor that caps `alpha * delta * direction` at [`MAX_STEP_NORM`].
fn step_scale(delta: f64, alpha: f64, direction: &[f64]) -> Result<f64, PolicyError> {
    let norm_sq: f64 = direction.iter().map(|v| v * v).sum();
    let step = alpha.abs() * delta.abs() * norm_sq.sqrt();
    if !step.is_finite() {
        return Err(PolicyError::NonFiniteDelta { delta: step });
    }
    Ok(if step > MAX_STEP_NORM { MAX_STEP_NORM / step } else { 1.0 })
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy parameter {name} = {value} is invalid: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
    #[error("state arity mismatch: these features require a {expected} state")]
    StateArity { expected: &'static str },
    #[error("action {action} lies outside the open support ({min}, {max})")]
    ActionOutsideSupport { action: f64, min: f64, max: f64 },
    #[error("vector length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite update signal delta = {delta}")]
    NonFiniteDelta { delta: f64 },
}

/// Observed state: the delay of the most recent delivered unit, plus its
/// feedback delay when the acknowledgment path is also random.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub delay: f64,
    pub feedback_delay: Option<f64>,
}

impl State {
    pub fn one_way(delay: f64) -> Self {
        Self { delay, feedback_delay: None }
    }

    pub fn two_way(delay: f64, feedback_delay: f64) -> Self {
        Self { delay, feedback_delay: Some(feedback_delay) }
    }
}

/// Cosine feature basis over the clamped state.
///
/// The one-dimensional basis is `f_k(y) = cos(k pi y / bound)` for
/// `k = 0..terms`; the two-dimensional basis is the tensor grid
/// `cos(j pi y / bound + k pi y' / feedback_bound)`. Both start with the
/// constant feature and stay within `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum FourierFeatures {
    Line { terms: usize, bound: f64 },
    Grid { terms: (usize, usize), bounds: (f64, f64) },
}

impl FourierFeatures {
    pub fn line(terms: usize, bound: f64) -> Result<Self, PolicyError> {
        if terms == 0 {
            return Err(PolicyError::InvalidParameter {
                name: "terms",
                value: 0.0,
                reason: "need at least the constant feature",
            });
        }
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(PolicyError::InvalidParameter { name: "bound", value: bound, reason: "must be > 0" });
        }
        Ok(Self::Line { terms, bound })
    }

    pub fn grid(terms: (usize, usize), bounds: (f64, f64)) -> Result<Self, PolicyError> {
        if terms.0 == 0 || terms.1 == 0 {
            return Err(PolicyError::InvalidParameter {
                name: "terms",
                value: 0.0,
                reason: "need at least the constant feature along each axis",
            });
        }
        if !(bounds.0 > 0.0) || !bounds.0.is_finite() {
            return Err(PolicyError::InvalidParameter { name: "bound", value: bounds.0, reason: "must be > 0" });
        }
        if !(bounds.1 > 0.0) || !bounds.1.is_finite() {
            return Err(PolicyError::InvalidParameter {
                name: "feedback_bound",
                value: bounds.1,
                reason: "must be > 0",
            });
        }
        Ok(Self::Grid { terms, bounds })
    }

    pub fn len(&self) -> usize {
        match *self {
            Self::Line { terms, .. } => terms,
            Self::Grid { terms, .. } => terms.0 * terms.1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Upper edge of the delay axis; states at or beyond it trigger the
    /// fixed out-of-range action in [`StochasticPolicy::sample_action`].
    pub fn delay_bound(&self) -> f64 {
        match *self {
            Self::Line { bound, .. } => bound,
            Self::Grid { bounds, .. } => bounds.0,
        }
    }

    /// Feature vector at `state`, with each coordinate clamped into its
    /// domain before evaluation.
    pub fn eval(&self, state: State) -> Result<Vec<f64>, PolicyError> {
        match *self {
            Self::Line { terms, bound } => {
                if state.feedback_delay.is_some() {
                    return Err(PolicyError::StateArity { expected: "one-way" });
                }
                let u = std::f64::consts::PI * state.delay.clamp(0.0, bound) / bound;
                Ok((0..terms).map(|k| (k as f64 * u).cos()).collect())
            }
            Self::Grid { terms, bounds } => {
                let Some(feedback) = state.feedback_delay else {
                    return Err(PolicyError::StateArity { expected: "two-way" });
                };
                let u = std::f64::consts::PI * state.delay.clamp(0.0, bounds.0) / bounds.0;
                let v = std::f64::consts::PI * feedback.clamp(0.0, bounds.1) / bounds.1;
                let mut out = Vec::with_capacity(terms.0 * terms.1);
                for j in 0..terms.0 {
                    for k in 0..terms.1 {
                        out.push((j as f64 * u + k as f64 * v).cos());
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Which control knob a policy drives; decides the fixed action used when
/// the state falls outside the feature domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionRole {
    /// Waiting time before the next transmission; out-of-range states wait
    /// zero (the lower bound).
    Wait,
    /// Cancellation threshold; out-of-range states keep the transmission
    /// alive to the upper bound.
    Discard,
}

/// One sampled action, with a flag marking the deterministic out-of-range
/// fallback (no parameter update may be derived from such a step).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub action: f64,
    pub fixed: bool,
}

/// Stochastic policy: bounded lognormal action with cosine-feature mean.
#[derive(Debug, Clone)]
pub struct StochasticPolicy {
    features: FourierFeatures,
    weights: Vec<f64>,
    sigma: f64,
    action_min: f64,
    action_max: f64,
    role: ActionRole,
}

impl StochasticPolicy {
    pub fn new(
        features: FourierFeatures,
        sigma: f64,
        action_min: f64,
        action_max: f64,
        role: ActionRole,
    ) -> Result<Self, PolicyError> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(PolicyError::InvalidParameter { name: "sigma", value: sigma, reason: "must be > 0" });
        }
        if !action_min.is_finite() || !action_max.is_finite() || !(action_min < action_max) {
            return Err(PolicyError::InvalidParameter {
                name: "action_min",
                value: action_min,
                reason: "action bounds must be finite with action_min < action_max",
            });
        }
        if role == ActionRole::Wait && action_min != 0.0 {
            return Err(PolicyError::InvalidParameter {
                name: "action_min",
                value: action_min,
                reason: "waiting times start at zero",
            });
        }
        let weights = vec![0.0; features.len()];
        Ok(Self { features, weights, sigma, action_min, action_max, role })
    }

    pub fn role(&self) -> ActionRole {
        self.role
    }

    pub fn action_min(&self) -> f64 {
        self.action_min
    }

    pub fn action_max(&self) -> f64 {
        self.action_max
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn features(&self) -> &FourierFeatures {
        &self.features
    }

    /// Latent-space mean at the (clamped) state.
    pub fn mu(&self, state: State) -> Result<f64, PolicyError> {
        let f = self.features.eval(state)?;
        Ok(dot(&self.weights, &f))
    }

    /// Action for a given latent Gaussian value: the bounded transform
    /// `a_max - (a_max - a_min) / (1 + e^g)`, before any clamping.
    pub fn action_from_latent(&self, g: f64) -> f64 {
        self.action_max - (self.action_max - self.action_min) / (1.0 + g.exp())
    }

    fn fallback_action(&self) -> f64 {
        match self.role {
            ActionRole::Wait => self.action_min,
            ActionRole::Discard => self.action_max,
        }
    }

    /// Draws an action. States at or beyond the feature domain edge get the
    /// role's fixed fallback instead of a random draw; sampled actions are
    /// nudged strictly inside the open support.
    pub fn sample_action(&self, state: State, rng: &mut ChaCha8Rng) -> Result<ActionSample, PolicyError> {
        if state.delay >= self.features.delay_bound() {
            return Ok(ActionSample { action: self.fallback_action(), fixed: true });
        }
        let mu = self.mu(state)?;
        let noise: f64 = rng.sample(StandardNormal);
        let raw = self.action_from_latent(mu + self.sigma * noise);
        let eps = 1e-9 * (self.action_max - self.action_min);
        let action = raw.clamp(self.action_min + eps, self.action_max - eps);
        Ok(ActionSample { action, fixed: false })
    }

    fn latent_of(&self, action: f64) -> Result<f64, PolicyError> {
        if !(action > self.action_min) || !(action < self.action_max) {
            return Err(PolicyError::ActionOutsideSupport {
                action,
                min: self.action_min,
                max: self.action_max,
            });
        }
        Ok(((action - self.action_min) / (self.action_max - action)).ln())
    }

    /// Log-density of `action` at `state`. This is the change-of-variables
    /// density of the bounded transform,
    /// `(a_max - a_min) / ((a - a_min)(a_max - a))` times the normal density
    /// of the latent log-ratio, so it integrates to one over the support.
    pub fn log_pdf(&self, state: State, action: f64) -> Result<f64, PolicyError> {
        let g = self.latent_of(action)?;
        let mu = self.mu(state)?;
        let z = (g - mu) / self.sigma;
        Ok((self.action_max - self.action_min).ln()
            - (action - self.action_min).ln()
            - (self.action_max - action).ln()
            - self.sigma.ln()
            - HALF_LN_TWO_PI
            - 0.5 * z * z)
    }

    /// Gradient of the log-density with respect to the weights:
    /// `((g - mu) / sigma^2) * f(state)`.
    pub fn eligibility(&self, state: State, action: f64) -> Result<Vec<f64>, PolicyError> {
        let g = self.latent_of(action)?;
        let f = self.features.eval(state)?;
        let mu = dot(&self.weights, &f);
        let scale = (g - mu) / (self.sigma * self.sigma);
        Ok(f.into_iter().map(|v| scale * v).collect())
    }

    /// Gradient-ascent step `weights += alpha * delta * eligibility`, with
    /// the displacement capped at [`MAX_STEP_NORM`].
    pub fn update(&mut self, delta: f64, alpha: f64, eligibility: &[f64]) -> Result<(), PolicyError> {
        if !delta.is_finite() {
            return Err(PolicyError::NonFiniteDelta { delta });
        }
        if eligibility.len() != self.weights.len() {
            return Err(PolicyError::LengthMismatch {
                expected: self.weights.len(),
                got: eligibility.len(),
            });
        }
        let scale = step_scale(delta, alpha, eligibility)?;
        for (w, e) in self.weights.iter_mut().zip(eligibility) {
            *w += scale * alpha * delta * e;
        }
        Ok(())
    }

    /// Replace the weight vector wholesale, e.g. to restore a saved policy.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<(), PolicyError> {
        if weights.len() != self.weights.len() {
            return Err(PolicyError::LengthMismatch {
                expected: self.weights.len(),
                got: weights.len(),
            });
        }
        if let Some(&bad) = weights.iter().find(|w| !w.is_finite()) {
            return Err(PolicyError::InvalidParameter {
                name: "weights",
                value: bad,
                reason: "weights must be finite",
            });
        }
        self.weights = weights;
        Ok(())
    }

    /// Expected action at `state` (the fallback value for out-of-range
    /// states), computed by quadrature over the latent Gaussian.
    pub fn mean_action(&self, state: State) -> Result<f64, PolicyError> {
        if state.delay >= self.features.delay_bound() {
            return Ok(self.fallback_action());
        }
        let mu = self.mu(state)?;
        let sigma = self.sigma;
        let span = self.action_max - self.action_min;
        let density_times_sigmoid = |g: f64| {
            let z = (g - mu) / sigma;
            let phi = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            phi / (1.0 + g.exp())
        };
        let expectation = integrate(&density_times_sigmoid, mu - 10.0 * sigma, mu + 10.0 * sigma, 1e-11);
        Ok(self.action_max - span * expectation)
    }

    /// Mean/expected-action profile over a uniform `points`-grid of
    /// `[0, delay_bound]`, for serialization. Two-way policies are sliced at
    /// a fixed representative feedback delay.
    pub fn snapshot_rows(
        &self,
        points: usize,
        fixed_feedback: Option<f64>,
    ) -> Result<Vec<SnapshotRow>, PolicyError> {
        let bound = self.features.delay_bound();
        let n = points.max(2);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let y = bound * i as f64 / (n - 1) as f64;
            let state = match (&self.features, fixed_feedback) {
                (FourierFeatures::Grid { .. }, Some(fb)) => State::two_way(y, fb),
                (FourierFeatures::Grid { .. }, None) => {
                    return Err(PolicyError::StateArity { expected: "two-way" })
                }
                _ => State::one_way(y),
            };
            rows.push(SnapshotRow {
                delay: y,
                mu: self.mu(state)?,
                mean_action: self.mean_action(state)?,
            });
        }
        Ok(rows)
    }
}

/// One row of a policy snapshot grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotRow {
    pub delay: f64,
    pub mu: f64,
    pub mean_action: f64,
}

/// Linear state-value function over the same cosine features.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    features: FourierFeatures,
    weights: Vec<f64>,
}

impl ValueFunction {
    pub fn new(features: FourierFeatures) -> Self {
        let weights = vec![0.0; features.len()];
        Self { features, weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn features(&self) -> &FourierFeatures {
        &self.features
    }

    /// Estimated differential value of `state`.
    pub fn value(&self, state: State) -> Result<f64, PolicyError> {
        let f = self.features.eval(state)?;
        Ok(dot(&self.weights, &f))
    }

    /// Gradient of the value with respect to the weights (the features).
    pub fn gradient(&self, state: State) -> Result<Vec<f64>, PolicyError> {
        self.features.eval(state)
    }

    /// Semi-gradient step `weights += alpha * delta * f(state)`, with the
    /// displacement capped at [`MAX_STEP_NORM`].
    pub fn update(&mut self, delta: f64, alpha: f64, state: State) -> Result<(), PolicyError> {
        if !delta.is_finite() {
            return Err(PolicyError::NonFiniteDelta { delta });
        }
        let f = self.features.eval(state)?;
        let scale = step_scale(delta, alpha, &f)?;
        for (w, v) in self.weights.iter_mut().zip(&f) {
            *w += scale * alpha * delta * v;
        }
        Ok(())
    }

    /// Replace the weight vector wholesale, e.g. to restore a saved critic.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<(), PolicyError> {
        if weights.len() != self.weights.len() {
            return Err(PolicyError::LengthMismatch {
                expected: self.weights.len(),
                got: weights.len(),
            });
        }
        if let Some(&bad) = weights.iter().find(|w| !w.is_finite()) {
            return Err(PolicyError::InvalidParameter {
                name: "weights",
                value: bad,
                reason: "weights must be finite",
            });
        }
        self.weights = weights;
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

//! Delay processes for the transmission channel.
//!
//! Two channel families are provided: a lognormal process driven by a latent
//! Gaussian AR(1) chain (correlated, continuous delays with unit mean by
//! construction), and a two-state Gilbert-Elliot chain with fixed per-state
//! delays. A two-way wrapper pairs independent forward and feedback
//! processes for setups where the delivery acknowledgment also takes
//! random time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Parameter rejected at construction.
#[derive(Debug, Error)]
#[error("channel parameter {name} = {value} is invalid: {reason}")]
pub struct ChannelError {
    pub name: &'static str,
    pub value: f64,
    pub reason: &'static str,
}

/// A stream of strictly positive transmission delays.
///
/// `next_delay` returns the delay of the current transmission and advances
/// the underlying process by exactly one step, whether or not the caller
/// ends up cancelling that transmission.
pub trait DelayProcess: Send {
    fn next_delay(&mut self) -> f64;
}

/// Stable, platform-independent per-run seed: the splitmix64 mix of
/// `(master_seed, run_index)`. See [`crate::numeric::mix_seed`] for the
/// exact integer mapping.
pub fn derive_run_seed(master_seed: u64, run_index: u64) -> u64 {
    crate::numeric::mix_seed(master_seed, run_index)
}

/// ChaCha8 generator for one named stream of a run (forward channel,
/// feedback channel, action sampling, ...), derived from the run seed.
pub fn stream_rng(run_seed: u64, stream_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::numeric::mix_seed(run_seed, stream_id))
}

/// Correlation knob `eta` for the lognormal process from its report-only
/// label `rho`, by inverting `rho = (e^eta - 1) / (e - 1)`.
///
/// The label spaces correlations conveniently over `[0, 1]`; the actual
/// lag-1 correlation of the emitted delays is
/// [`LognormalMarkovDelay::lag1_delay_correlation`].
pub fn eta_from_rho(rho: f64) -> Result<f64, ChannelError> {
    if !(0.0..=1.0).contains(&rho) || !rho.is_finite() {
        return Err(ChannelError { name: "rho", value: rho, reason: "must lie in [0, 1]" });
    }
    Ok((rho * (std::f64::consts::E - 1.0)).ln_1p())
}

/// Lognormal delays driven by a latent Gaussian AR(1) chain.
///
/// The latent state follows `s' = eta * s + sqrt(1 - eta^2) * n` with
/// standard normal innovations, so its stationary law is standard normal;
/// the emitted delay is `mean_scale * exp(sigma_d * s) / exp(sigma_d^2 / 2)`,
/// which has mean `mean_scale` exactly.
#[derive(Debug, Clone)]
pub struct LognormalMarkovDelay {
    sigma_d: f64,
    eta: f64,
    mean_scale: f64,
    innovation_scale: f64,
    normalizer: f64,
    latent: f64,
    rng: ChaCha8Rng,
}

impl LognormalMarkovDelay {
    /// Builds the process with the latent state drawn from its stationary
    /// (standard normal) distribution, consuming one draw from `rng`.
    pub fn new(sigma_d: f64, eta: f64, mean_scale: f64, mut rng: ChaCha8Rng) -> Result<Self, ChannelError> {
        if !(sigma_d > 0.0) || !sigma_d.is_finite() {
            return Err(ChannelError { name: "sigma_d", value: sigma_d, reason: "must be > 0" });
        }
        if !(0.0..=1.0).contains(&eta) || !eta.is_finite() {
            return Err(ChannelError { name: "eta", value: eta, reason: "must lie in [0, 1]" });
        }
        if !(mean_scale > 0.0) || !mean_scale.is_finite() {
            return Err(ChannelError { name: "mean_scale", value: mean_scale, reason: "must be > 0" });
        }
        let latent = rng.sample(StandardNormal);
        Ok(Self {
            sigma_d,
            eta,
            mean_scale,
            innovation_scale: (1.0 - eta * eta).sqrt(),
            normalizer: (0.5 * sigma_d * sigma_d).exp(),
            latent,
            rng,
        })
    }

    /// Exact lag-1 correlation of consecutive emitted delays:
    /// `(e^(sigma_d^2 * eta) - 1) / (e^(sigma_d^2) - 1)`.
    pub fn lag1_delay_correlation(&self) -> f64 {
        let s2 = self.sigma_d * self.sigma_d;
        (s2 * self.eta).exp_m1() / s2.exp_m1()
    }

    #[cfg(test)]
    fn latent(&self) -> f64 {
        self.latent
    }
}

impl DelayProcess for LognormalMarkovDelay {
    fn next_delay(&mut self) -> f64 {
        let y = self.mean_scale * (self.sigma_d * self.latent).exp() / self.normalizer;
        let n: f64 = self.rng.sample(StandardNormal);
        self.latent = self.eta * self.latent + self.innovation_scale * n;
        y
    }
}

/// Two-state Markov channel with fixed per-state delays `y0 < y1`.
///
/// State 0 is the fast ("good") state; `p` is the 0->1 transition
/// probability and `q` the 1->0 probability, applied once per emitted delay.
#[derive(Debug, Clone)]
pub struct GilbertElliotDelay {
    p: f64,
    q: f64,
    delays: [f64; 2],
    state: usize,
    rng: ChaCha8Rng,
}

impl GilbertElliotDelay {
    /// Builds the chain with the initial state drawn from its stationary
    /// distribution (state 0 when `p + q = 0`, where every state is
    /// absorbing), consuming one draw from `rng`.
    pub fn new(p: f64, q: f64, y0: f64, y1: f64, mut rng: ChaCha8Rng) -> Result<Self, ChannelError> {
        Self::validate(p, q, y0, y1)?;
        let occupancy = if p + q == 0.0 { 0.0 } else { p / (p + q) };
        let state = usize::from(rng.gen::<f64>() < occupancy);
        Ok(Self { p, q, delays: [y0, y1], state, rng })
    }

    /// Builds the chain pinned to an explicit initial state (0 or 1).
    pub fn with_initial_state(
        p: f64,
        q: f64,
        y0: f64,
        y1: f64,
        state: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self, ChannelError> {
        Self::validate(p, q, y0, y1)?;
        if state > 1 {
            return Err(ChannelError { name: "state", value: state as f64, reason: "must be 0 or 1" });
        }
        Ok(Self { p, q, delays: [y0, y1], state, rng })
    }

    fn validate(p: f64, q: f64, y0: f64, y1: f64) -> Result<(), ChannelError> {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(ChannelError { name: "p", value: p, reason: "must lie in [0, 1]" });
        }
        if !(0.0..=1.0).contains(&q) || !q.is_finite() {
            return Err(ChannelError { name: "q", value: q, reason: "must lie in [0, 1]" });
        }
        if !(y0 >= 0.0) || !y0.is_finite() {
            return Err(ChannelError { name: "y0", value: y0, reason: "must be >= 0" });
        }
        if !(y1 > y0) || !y1.is_finite() {
            return Err(ChannelError { name: "y1", value: y1, reason: "must be > y0" });
        }
        Ok(())
    }

    /// Long-run fraction of time spent in the slow state: `p / (p + q)`
    /// (zero for the degenerate frozen chain).
    pub fn slow_state_occupancy(&self) -> f64 {
        if self.p + self.q == 0.0 {
            0.0
        } else {
            self.p / (self.p + self.q)
        }
    }

    /// Current state, exposed for transition-frequency tests.
    pub fn state(&self) -> usize {
        self.state
    }
}

impl DelayProcess for GilbertElliotDelay {
    fn next_delay(&mut self) -> f64 {
        let y = self.delays[self.state];
        let flip_prob = if self.state == 0 { self.p } else { self.q };
        if self.rng.gen::<f64>() < flip_prob {
            self.state ^= 1;
        }
        y
    }
}

/// Independent forward and feedback delay processes for two-way setups.
///
/// The two generators own separate states and separate RNG streams, so the
/// forward draw sequence is unchanged by how often feedback is sampled.
pub struct TwoWayDelayProcess {
    pub forward: Box<dyn DelayProcess>,
    pub backward: Box<dyn DelayProcess>,
}

impl TwoWayDelayProcess {
    pub fn new(forward: Box<dyn DelayProcess>, backward: Box<dyn DelayProcess>) -> Self {
        Self { forward, backward }
    }

    pub fn next_forward(&mut self) -> f64 {
        self.forward.next_delay()
    }

    pub fn next_backward(&mut self) -> f64 {
        self.backward.next_delay()
    }
}

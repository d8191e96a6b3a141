//! Average-cost policy-gradient agents for age-of-information scheduling.
//!
//! A source samples data units and sends them to a destination over a
//! channel with random transmission delays. Each delivery costs a fixed
//! transmission fee plus an age-of-information term, and the goal is to
//! minimize the long-run average cost per unit time. Two control knobs are
//! supported: waiting before the next transmission, and cancelling a
//! transmission whose delay exceeds a threshold. Agents learn parametric
//! policies for either knob (or both at once) by stochastic gradient steps
//! on a differential-return signal.
//!
//! Module layout:
//!
//! - [`channel`]: delay processes (correlated lognormal, Gilbert-Elliot).
//! - [`cost`]: delivery cost model and age penalty functions.
//! - [`policy`]: cosine-feature policies and the linear state-value critic.
//! - [`agents`]: per-delivery learning loops and fixed-action baselines.
//! - [`oracle`]: reference optima for Gilbert-Elliot scenarios.
//! - [`config`] / [`sim`]: experiment configuration, replicated runs, CSV output.
//! - [`check`]: fast self-test suite backing the `check` CLI subcommand.

// Parameter validation uses `!(x > 0.0)` on purpose: unlike `x <= 0.0`,
// the negated form also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod channel;
pub mod check;
pub mod config;
pub mod cost;
pub mod numeric;
pub mod oracle;
pub mod policy;
pub mod sim;

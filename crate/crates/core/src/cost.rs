//! Delivery cost model: a per-transmission fee plus an age-of-information
//! term charged when a data unit arrives.
//!
//! Between deliveries the destination's information age grows linearly from
//! the previous delivered delay. The age term is either the integral of a
//! penalty function over that growth interval, or a 0/1 charge when the peak
//! age crosses a threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("cost parameter {name} = {value} is invalid: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
    #[error("integration bounds [{lo}, {hi}] are invalid: {reason}")]
    InvalidBounds { lo: f64, hi: f64, reason: &'static str },
    #[error("delivery record is invalid: {reason}")]
    InvalidRecord { reason: &'static str },
}

/// Non-decreasing age penalty `p(t)` on `[0, inf)`.
///
/// All variants except `Exponential` vanish at zero age; `e^(rate * t)` is
/// kept in its conventional form, which starts at one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyFunction {
    /// `p(t) = t`.
    Identity,
    /// `p(t) = t^exponent`, `exponent > 0`.
    Power { exponent: f64 },
    /// `p(t) = e^(rate * t)`, `rate > 0`.
    Exponential { rate: f64 },
    /// `p(t) = floor(rate * t)`, `rate > 0`.
    Step { rate: f64 },
    /// `p(t) = scale * (e^(rate * t) - 1)`, `scale > 0`, `rate > 0`.
    ScaledExponential { scale: f64, rate: f64 },
}

impl PenaltyFunction {
    pub fn validate(&self) -> Result<(), CostError> {
        let check_positive = |name: &'static str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(CostError::InvalidParameter { name, value, reason: "must be > 0" })
            }
        };
        match *self {
            PenaltyFunction::Identity => Ok(()),
            PenaltyFunction::Power { exponent } => check_positive("exponent", exponent),
            PenaltyFunction::Exponential { rate } => check_positive("rate", rate),
            PenaltyFunction::Step { rate } => check_positive("rate", rate),
            PenaltyFunction::ScaledExponential { scale, rate } => {
                check_positive("scale", scale)?;
                check_positive("rate", rate)
            }
        }
    }

    /// Pointwise penalty value at age `t >= 0`.
    pub fn evaluate(&self, t: f64) -> f64 {
        match *self {
            PenaltyFunction::Identity => t,
            PenaltyFunction::Power { exponent } => t.powf(exponent),
            PenaltyFunction::Exponential { rate } => (rate * t).exp(),
            PenaltyFunction::Step { rate } => (rate * t).floor(),
            PenaltyFunction::ScaledExponential { scale, rate } => scale * (rate * t).exp_m1(),
        }
    }
}

/// Closed-form integral of `penalty` over `[lo, hi]`, `0 <= lo <= hi`.
///
/// The step variant is summed exactly over its jump points; everything else
/// is an antiderivative difference.
pub fn penalty_integral(penalty: &PenaltyFunction, lo: f64, hi: f64) -> Result<f64, CostError> {
    penalty.validate()?;
    if !(lo >= 0.0) || !lo.is_finite() {
        return Err(CostError::InvalidBounds { lo, hi, reason: "lower bound must be finite and >= 0" });
    }
    if !(hi >= lo) || !hi.is_finite() {
        return Err(CostError::InvalidBounds { lo, hi, reason: "upper bound must be finite and >= lower" });
    }
    let value = match *penalty {
        PenaltyFunction::Identity => 0.5 * (hi * hi - lo * lo),
        PenaltyFunction::Power { exponent } => {
            (hi.powf(exponent + 1.0) - lo.powf(exponent + 1.0)) / (exponent + 1.0)
        }
        PenaltyFunction::Exponential { rate } => ((rate * hi).exp() - (rate * lo).exp()) / rate,
        PenaltyFunction::Step { rate } => {
            // Piecewise constant with value k on [k/rate, (k+1)/rate).
            let mut total = 0.0;
            let mut level = (rate * lo).floor();
            let mut left = lo;
            loop {
                let right = ((level + 1.0) / rate).min(hi);
                total += level * (right - left);
                if right >= hi {
                    break;
                }
                left = right;
                level += 1.0;
            }
            total
        }
        PenaltyFunction::ScaledExponential { scale, rate } => {
            scale * (((rate * hi).exp() - (rate * lo).exp()) / rate - (hi - lo))
        }
    };
    Ok(value)
}

/// Age-of-information charge attached to each delivery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgeCharge {
    /// Integral of a penalty function over the age interval spanned by the
    /// delivery gap.
    Penalty { penalty: PenaltyFunction },
    /// One unit whenever the peak age (just before the delivery) strictly
    /// exceeds `threshold`.
    PeakViolation { threshold: f64 },
}

/// One completed delivery, as seen by the cost model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveryRecord {
    /// Delay of the previous delivered unit: the age right after the
    /// previous delivery.
    pub prev_delay: f64,
    /// Time elapsed between the previous delivery and this one.
    pub elapsed: f64,
    /// Transmissions consumed by this delivery (>= 1; cancelled attempts
    /// count).
    pub attempts: u32,
}

impl DeliveryRecord {
    fn validate(&self) -> Result<(), CostError> {
        if !(self.prev_delay >= 0.0) || !self.prev_delay.is_finite() {
            return Err(CostError::InvalidRecord { reason: "prev_delay must be finite and >= 0" });
        }
        if !(self.elapsed > 0.0) || !self.elapsed.is_finite() {
            return Err(CostError::InvalidRecord { reason: "elapsed must be finite and > 0" });
        }
        if self.attempts == 0 {
            return Err(CostError::InvalidRecord { reason: "attempts must be >= 1" });
        }
        Ok(())
    }
}

/// Full delivery cost model: age charge plus per-transmission fee.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    age: AgeCharge,
    transmission_cost: f64,
}

impl CostModel {
    pub fn new(age: AgeCharge, transmission_cost: f64) -> Result<Self, CostError> {
        match age {
            AgeCharge::Penalty { penalty } => penalty.validate()?,
            AgeCharge::PeakViolation { threshold } => {
                if !(threshold > 0.0) || !threshold.is_finite() {
                    return Err(CostError::InvalidParameter {
                        name: "threshold",
                        value: threshold,
                        reason: "must be > 0",
                    });
                }
            }
        }
        if !(transmission_cost >= 0.0) || !transmission_cost.is_finite() {
            return Err(CostError::InvalidParameter {
                name: "transmission_cost",
                value: transmission_cost,
                reason: "must be >= 0",
            });
        }
        Ok(Self { age, transmission_cost })
    }

    pub fn transmission_cost(&self) -> f64 {
        self.transmission_cost
    }

    pub fn age_charge(&self) -> &AgeCharge {
        &self.age
    }

    /// Age component of the delivery cost (what the environment feeds back
    /// to the agent; the agent adds its own transmission fees).
    pub fn age_cost(&self, record: &DeliveryRecord) -> Result<f64, CostError> {
        record.validate()?;
        match self.age {
            AgeCharge::Penalty { penalty } => {
                penalty_integral(&penalty, record.prev_delay, record.prev_delay + record.elapsed)
            }
            AgeCharge::PeakViolation { threshold } => {
                Ok(if record.prev_delay + record.elapsed > threshold { 1.0 } else { 0.0 })
            }
        }
    }

    /// Total cost of one delivery: `attempts * transmission_cost` plus the
    /// age component.
    pub fn delivery_cost(&self, record: &DeliveryRecord) -> Result<f64, CostError> {
        Ok(record.attempts as f64 * self.transmission_cost + self.age_cost(record)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::integrate;
    use proptest::prelude::*;

    #[test]
    fn identity_integral_examples() {
        let p = PenaltyFunction::Identity;
        assert!((penalty_integral(&p, 1.0, 2.0).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(penalty_integral(&p, 3.0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn step_integral_example() {
        // floor(0.4 t) over [0, 5]: zero below t = 2.5, one above.
        let p = PenaltyFunction::Step { rate: 0.4 };
        let exact = penalty_integral(&p, 0.0, 5.0).unwrap();
        assert!((exact - 2.5).abs() < 1e-9);
        // Independent check: quadrature over the smooth pieces.
        let pieces = integrate(&|t| p.evaluate(t), 0.0, 2.5, 1e-10)
            + integrate(&|t| p.evaluate(t), 2.5, 5.0, 1e-10);
        assert!((exact - pieces).abs() < 1e-6);
    }

    #[test]
    fn bounds_are_validated() {
        let p = PenaltyFunction::Identity;
        assert!(penalty_integral(&p, 2.0, 1.0).is_err());
        assert!(penalty_integral(&p, -1.0, 1.0).is_err());
        assert!(penalty_integral(&p, 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn penalty_parameters_are_validated() {
        assert!(PenaltyFunction::Power { exponent: 0.0 }.validate().is_err());
        assert!(PenaltyFunction::Exponential { rate: -1.0 }.validate().is_err());
        assert!(PenaltyFunction::Step { rate: 0.0 }.validate().is_err());
        assert!(PenaltyFunction::ScaledExponential { scale: 0.0, rate: 1.0 }.validate().is_err());
        assert!(PenaltyFunction::Identity.validate().is_ok());
    }

    #[test]
    fn penalties_vanish_at_zero_age_except_exponential() {
        // The conventional exponential form starts at one; every other
        // variant starts at zero.
        assert_eq!(PenaltyFunction::Identity.evaluate(0.0), 0.0);
        assert_eq!(PenaltyFunction::Power { exponent: 1.5 }.evaluate(0.0), 0.0);
        assert_eq!(PenaltyFunction::Step { rate: 0.4 }.evaluate(0.0), 0.0);
        assert_eq!(PenaltyFunction::ScaledExponential { scale: 2.0, rate: 0.5 }.evaluate(0.0), 0.0);
        assert_eq!(PenaltyFunction::Exponential { rate: 0.5 }.evaluate(0.0), 1.0);
    }

    #[test]
    fn peak_violation_threshold_is_strict() {
        let model =
            CostModel::new(AgeCharge::PeakViolation { threshold: 5.0 }, 0.0).unwrap();
        // Peak age 1 + 2 = 3 stays below the threshold.
        let quiet = DeliveryRecord { prev_delay: 1.0, elapsed: 2.0, attempts: 1 };
        assert_eq!(model.delivery_cost(&quiet).unwrap(), 0.0);
        // Peak age exactly at the threshold still does not violate it.
        let at = DeliveryRecord { prev_delay: 1.0, elapsed: 4.0, attempts: 1 };
        assert_eq!(model.delivery_cost(&at).unwrap(), 0.0);
        let over = DeliveryRecord { prev_delay: 1.0, elapsed: 4.0 + 1e-9, attempts: 1 };
        assert_eq!(model.delivery_cost(&over).unwrap(), 1.0);
    }

    #[test]
    fn delivery_cost_combines_fee_and_age() {
        let model = CostModel::new(
            AgeCharge::Penalty { penalty: PenaltyFunction::Identity },
            4.0,
        )
        .unwrap();
        // Two attempts at fee 4, age interval [1, 6]: 8 + (36 - 1)/2.
        let rec = DeliveryRecord { prev_delay: 1.0, elapsed: 5.0, attempts: 2 };
        assert!((model.delivery_cost(&rec).unwrap() - 25.5).abs() < 1e-12);
        assert!((model.age_cost(&rec).unwrap() - 17.5).abs() < 1e-12);
    }

    #[test]
    fn vanishing_gap_costs_vanish() {
        let model = CostModel::new(
            AgeCharge::Penalty { penalty: PenaltyFunction::Identity },
            0.0,
        )
        .unwrap();
        let rec = DeliveryRecord { prev_delay: 2.0, elapsed: 1e-12, attempts: 1 };
        assert!(model.delivery_cost(&rec).unwrap() < 1e-10);
        let degenerate = DeliveryRecord { prev_delay: 2.0, elapsed: 0.0, attempts: 1 };
        assert!(model.delivery_cost(&degenerate).is_err());
    }

    #[test]
    fn record_validation() {
        let model = CostModel::new(
            AgeCharge::Penalty { penalty: PenaltyFunction::Identity },
            1.0,
        )
        .unwrap();
        assert!(model
            .delivery_cost(&DeliveryRecord { prev_delay: -1.0, elapsed: 1.0, attempts: 1 })
            .is_err());
        assert!(model
            .delivery_cost(&DeliveryRecord { prev_delay: 1.0, elapsed: 1.0, attempts: 0 })
            .is_err());
    }

    #[test]
    fn model_parameters_are_validated() {
        assert!(CostModel::new(AgeCharge::PeakViolation { threshold: 0.0 }, 1.0).is_err());
        assert!(CostModel::new(
            AgeCharge::Penalty { penalty: PenaltyFunction::Identity },
            -0.5
        )
        .is_err());
    }

    fn arbitrary_penalty() -> impl Strategy<Value = PenaltyFunction> {
        prop_oneof![
            Just(PenaltyFunction::Identity),
            (0.2..3.0_f64).prop_map(|exponent| PenaltyFunction::Power { exponent }),
            (0.05..1.5_f64).prop_map(|rate| PenaltyFunction::Exponential { rate }),
            (0.05..3.0_f64).prop_map(|rate| PenaltyFunction::Step { rate }),
            ((0.1..3.0_f64), (0.05..1.5_f64))
                .prop_map(|(scale, rate)| PenaltyFunction::ScaledExponential { scale, rate }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn integral_is_additive(
            penalty in arbitrary_penalty(),
            a in 0.0..10.0_f64,
            step1 in 0.0..5.0_f64,
            step2 in 0.0..5.0_f64,
        ) {
            let b = a + step1;
            let c = b + step2;
            let whole = penalty_integral(&penalty, a, c).unwrap();
            let split = penalty_integral(&penalty, a, b).unwrap()
                + penalty_integral(&penalty, b, c).unwrap();
            let scale = whole.abs().max(1.0);
            prop_assert!((whole - split).abs() <= 1e-12 * scale);
        }

        #[test]
        fn closed_forms_match_quadrature(
            penalty in arbitrary_penalty(),
            a in 0.0..10.0_f64,
            width in 0.01..8.0_f64,
        ) {
            let b = a + width;
            let exact = penalty_integral(&penalty, a, b).unwrap();
            // Tolerance scales with the integral so steep exponentials
            // stay tractable for the adaptive quadrature.
            let tol = 1e-12 * exact.abs().max(1.0);
            // The step penalty is integrated piece by piece so the
            // quadrature never straddles a jump.
            let numeric = if let PenaltyFunction::Step { rate } = penalty {
                let mut total = 0.0;
                let mut left = a;
                let mut level = (rate * a).floor();
                loop {
                    let right = ((level + 1.0) / rate).min(b);
                    total += integrate(&|t| penalty.evaluate(t), left, right, tol);
                    if right >= b {
                        break;
                    }
                    left = right;
                    level += 1.0;
                }
                total
            } else {
                integrate(&|t| penalty.evaluate(t), a, b, tol)
            };
            let scale = exact.abs().max(1e-6);
            prop_assert!(
                (exact - numeric).abs() <= 1e-8 * scale,
                "exact {} vs quadrature {}", exact, numeric
            );
        }

        #[test]
        fn penalty_non_negative_and_non_decreasing(
            penalty in arbitrary_penalty(),
            t in 0.0..20.0_f64,
            dt in 0.0..5.0_f64,
        ) {
            let here = penalty.evaluate(t);
            let later = penalty.evaluate(t + dt);
            prop_assert!(here >= 0.0);
            prop_assert!(later >= here - 1e-12);
        }

        #[test]
        fn delivery_cost_covers_fees_and_grows(
            fee in 0.0..5.0_f64,
            prev in 0.0..5.0_f64,
            elapsed in 0.01..5.0_f64,
            extra in 0.01..5.0_f64,
            attempts in 1u32..6,
        ) {
            let model = CostModel::new(
                AgeCharge::Penalty { penalty: PenaltyFunction::Identity },
                fee,
            ).unwrap();
            let rec = DeliveryRecord { prev_delay: prev, elapsed, attempts };
            let cost = model.delivery_cost(&rec).unwrap();
            prop_assert!(cost >= attempts as f64 * fee);
            // Monotone in elapsed time and in attempt count.
            let longer = DeliveryRecord { elapsed: elapsed + extra, ..rec };
            prop_assert!(model.delivery_cost(&longer).unwrap() >= cost);
            let retried = DeliveryRecord { attempts: attempts + 1, ..rec };
            prop_assert!(model.delivery_cost(&retried).unwrap() >= cost);
        }
    }
}

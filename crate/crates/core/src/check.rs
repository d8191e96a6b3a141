//! Fast self-check suite: numerical invariants cheap enough to run on any
//! install (`aoi-pg check`). Each check is exposed as a measurement
//! function so test targets can rerun the same computations at their own
//! sample counts and tolerances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{DelayProcess, GilbertElliotDelay, LognormalMarkovDelay};
use crate::config::ExperimentConfig;
use crate::cost::{penalty_integral, PenaltyFunction};
use crate::numeric::integrate;
use crate::oracle::{ge_wait_optimize, GeWaitProblem};
use crate::policy::{ActionRole, FourierFeatures, State, StochasticPolicy, ValueFunction};
use crate::sim::run_once;

/// One named check with its measured detail.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Everything `run_checks` measured.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub results: Vec<CheckResult>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

fn random_policy(rng: &mut ChaCha8Rng, two_way: bool) -> (StochasticPolicy, State) {
    let bound = rng.gen_range(1.0..10.0);
    let terms = rng.gen_range(1..=6);
    let features = if two_way {
        let feedback_bound = rng.gen_range(1.0..5.0);
        FourierFeatures::grid((terms, rng.gen_range(1..=4)), (bound, feedback_bound)).unwrap()
    } else {
        FourierFeatures::line(terms, bound).unwrap()
    };
    let role = if rng.gen_bool(0.5) { ActionRole::Wait } else { ActionRole::Discard };
    let (action_min, action_max) = match role {
        ActionRole::Wait => (0.0, rng.gen_range(0.5..10.0)),
        ActionRole::Discard => {
            let lo = rng.gen_range(0.1..3.0);
            (lo, lo + rng.gen_range(0.5..8.0))
        }
    };
    // Weight and spread ranges cover the regime learning actually visits
    // while keeping the squashed density numerically well conditioned
    // near the support edges.
    let sigma = rng.gen_range(0.2..1.2);
    let mut policy = StochasticPolicy::new(features, sigma, action_min, action_max, role).unwrap();
    let weights: Vec<f64> = (0..policy.weights().len()).map(|_| rng.gen_range(-0.8..0.8)).collect();
    policy.set_weights(weights).unwrap();
    let state = if two_way {
        State::two_way(
            rng.gen_range(0.0..policy.features().delay_bound() * 0.999),
            rng.gen_range(0.0..4.0),
        )
    } else {
        State::one_way(rng.gen_range(0.0..policy.features().delay_bound() * 0.999))
    };
    (policy, state)
}

fn random_state_like(policy: &StochasticPolicy, two_way: bool, rng: &mut ChaCha8Rng) -> State {
    let bound = policy.features().delay_bound();
    if two_way {
        State::two_way(rng.gen_range(0.0..bound * 0.999), rng.gen_range(0.0..4.0))
    } else {
        State::one_way(rng.gen_range(0.0..bound * 0.999))
    }
}

/// Worst relative error between analytic gradients (policy eligibility and
/// critic gradient) and central finite differences across random cases.
pub fn max_gradient_fd_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let two_way = case % 3 == 2;
        let (policy, state) = random_policy(&mut rng, two_way);
        let action = policy.sample_action(state, &mut rng).unwrap().action;
        let eligibility = policy.eligibility(state, action).unwrap();
        let n = eligibility.len();
        let mut fd = vec![0.0; n];
        for k in 0..n {
            let mut direction = vec![0.0; n];
            direction[k] = 1.0;
            let mut plus = policy.clone();
            plus.update(h, 1.0, &direction).unwrap();
            let mut minus = policy.clone();
            minus.update(-h, 1.0, &direction).unwrap();
            fd[k] = (plus.log_pdf(state, action).unwrap()
                - minus.log_pdf(state, action).unwrap())
                / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let difference: Vec<f64> = eligibility.iter().zip(&fd).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&difference) / norm(&fd).max(1e-3));

        // Critic gradient against directional finite differences. The
        // critic only moves along feature vectors, so probe a few states
        // and difference the value along each induced direction.
        let mut critic = ValueFunction::new(policy.features().clone());
        for _ in 0..3 {
            let probe = random_state_like(&policy, two_way, &mut rng);
            critic.update(rng.gen_range(-1.0..1.0), 1.0, probe).unwrap();
        }
        let grad = critic.gradient(state).unwrap();
        for _ in 0..2 {
            let probe = random_state_like(&policy, two_way, &mut rng);
            let direction = policy.features().eval(probe).unwrap();
            let mut plus = critic.clone();
            plus.update(h, 1.0, probe).unwrap();
            let mut minus = critic.clone();
            minus.update(-h, 1.0, probe).unwrap();
            let fd_dir =
                (plus.value(state).unwrap() - minus.value(state).unwrap()) / (2.0 * h);
            let analytic: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
            worst = worst.max((analytic - fd_dir).abs() / fd_dir.abs().max(1e-3));
        }
    }
    worst
}

/// Worst |1 - integral of the policy density over its support| across
/// random cases.
pub fn max_normalization_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (policy, state) = random_policy(&mut rng, false);
        let mu = policy.mu(state).unwrap();
        let sigma = policy.sigma();
        let lo = policy.action_from_latent(mu - 9.0 * sigma);
        let hi = policy.action_from_latent(mu + 9.0 * sigma);
        let mass = integrate(
            &|a| policy.log_pdf(state, a).map(f64::exp).unwrap_or(0.0),
            lo,
            hi,
            1e-10,
        );
        worst = worst.max((mass - 1.0).abs());
    }
    worst
}

/// (|sample mean - 1|, |sample lag-1 correlation - analytic|) of the
/// lognormal delay process.
pub fn lognormal_moment_errors(draws: usize, seed: u64) -> (f64, f64) {
    let mut process =
        LognormalMarkovDelay::new(1.5, 0.620114506958278, 1.0, ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
    let expected_corr = process.lag1_delay_correlation();
    let samples: Vec<f64> = (0..draws).map(|_| process.next_delay()).collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = samples.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    let lag1 = samples
        .windows(2)
        .map(|pair| (pair[0] - mean) * (pair[1] - mean))
        .sum::<f64>()
        / ((n - 1.0) * variance);
    ((mean - 1.0).abs(), (lag1 - expected_corr).abs())
}

/// |sample slow-state occupancy - p/(p+q)| of the two-state chain.
pub fn gilbert_elliot_occupancy_error(draws: usize, seed: u64) -> f64 {
    let mut chain =
        GilbertElliotDelay::new(0.1, 0.9, 1.0, 10.0, ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let expected = chain.slow_state_occupancy();
    let slow = (0..draws).filter(|_| chain.next_delay() > 1.0).count();
    (slow as f64 / draws as f64 - expected).abs()
}

/// Relative bookkeeping drift |beta * time - cost| / cost after a short
/// learning run.
pub fn conservation_error(horizon: f64, seed: u64) -> f64 {
    let text = format!(
        r#"{{
            "channel": {{"kind": "lognormal"}},
            "cost": {{"kind": "penalty", "penalty": {{"kind": "identity"}}, "transmission_cost": 1.0}},
            "agent": {{"algorithm": "wait"}},
            "sim": {{"horizon": {horizon}, "replications": 1, "master_seed": {seed}}}
        }}"#
    );
    let config = ExperimentConfig::from_json(&text).expect("static config");
    let trajectory = run_once(&config, 0).expect("short run");
    (trajectory.final_beta * trajectory.final_time - trajectory.final_cost).abs()
        / trajectory.final_cost.abs()
}

/// (|z* - (sqrt(2)-1)|, |beta* - (1+sqrt(2))|) for the collapsed one-state
/// wait problem with unit delay and unit fee.
pub fn degenerate_wait_oracle_errors() -> (f64, f64) {
    let problem = GeWaitProblem {
        p: 0.5,
        q: 0.5,
        y0: 1.0,
        y1: 1.0,
        transmission_cost: 1.0,
        z_max: 2.0,
        penalty: PenaltyFunction::Identity,
    };
    let solution = ge_wait_optimize(&problem).expect("static problem");
    let z_err = (solution.z0 - (2f64.sqrt() - 1.0)).abs().max((solution.z1 - (2f64.sqrt() - 1.0)).abs());
    let beta_err = (solution.beta - (1.0 + 2f64.sqrt())).abs();
    (z_err, beta_err)
}

/// Worst |closed-form penalty integral - adaptive quadrature| across random
/// penalties and intervals (step penalties integrated piecewise between
/// their breakpoints).
pub fn cost_quadrature_max_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let penalty = match case % 5 {
            0 => PenaltyFunction::Identity,
            1 => PenaltyFunction::Power { exponent: rng.gen_range(0.5..3.0) },
            2 => PenaltyFunction::Exponential { rate: rng.gen_range(0.1..1.5) },
            3 => PenaltyFunction::Step { rate: rng.gen_range(0.2..2.0) },
            _ => PenaltyFunction::ScaledExponential {
                scale: rng.gen_range(0.5..2.0),
                rate: rng.gen_range(0.1..1.5),
            },
        };
        let lo = rng.gen_range(0.0..5.0);
        let hi = lo + rng.gen_range(0.1..8.0);
        let closed = penalty_integral(&penalty, lo, hi).unwrap();
        // Tolerance scales with the integral so steep exponentials stay
        // tractable for the adaptive quadrature.
        let tol = 1e-11 * closed.abs().max(1.0);
        let quadrature = if let PenaltyFunction::Step { rate } = penalty {
            // Integrate piecewise so the quadrature sees smooth segments;
            // walking integer edge indices guarantees termination even
            // when an edge rounds onto the current position.
            let mut total = 0.0;
            let mut a = lo;
            let mut edge_index = (lo * rate).floor() as i64 + 1;
            loop {
                let edge = edge_index as f64 / rate;
                if edge >= hi {
                    total += integrate(&|t| penalty.evaluate(t), a, hi, tol);
                    break;
                }
                if edge > a {
                    total += integrate(&|t| penalty.evaluate(t), a, edge, tol);
                    a = edge;
                }
                edge_index += 1;
            }
            total
        } else {
            integrate(&|t| penalty.evaluate(t), lo, hi, tol)
        };
        let scale = closed.abs().max(1.0);
        worst = worst.max((closed - quadrature).abs() / scale);
    }
    worst
}

/// Runs the full fast suite with its default budgets.
pub fn run_checks() -> CheckReport {
    let mut results = Vec::new();
    let mut push = |name: &'static str, passed: bool, detail: String| {
        results.push(CheckResult { name, passed, detail });
    };

    let gradient = max_gradient_fd_error(200, 101);
    push("gradient_finite_difference", gradient <= 1e-5, format!("max rel err {gradient:.2e}"));

    let normalization = max_normalization_error(20, 102);
    push("density_normalization", normalization <= 1e-6, format!("max |1-mass| {normalization:.2e}"));

    let (mean_err, lag_err) = lognormal_moment_errors(300_000, 103);
    push(
        "lognormal_channel_moments",
        mean_err <= 0.03 && lag_err <= 0.05,
        format!("mean err {mean_err:.3}, lag-1 err {lag_err:.3}"),
    );

    let occupancy = gilbert_elliot_occupancy_error(300_000, 104);
    push("gilbert_elliot_occupancy", occupancy <= 0.01, format!("occupancy err {occupancy:.4}"));

    let conservation = conservation_error(2_000.0, 105);
    push("bookkeeping_conservation", conservation <= 1e-9, format!("rel drift {conservation:.2e}"));

    let (z_err, beta_err) = degenerate_wait_oracle_errors();
    push(
        "degenerate_wait_oracle",
        z_err <= 1e-5 && beta_err <= 1e-9,
        format!("z err {z_err:.2e}, beta err {beta_err:.2e}"),
    );

    let quadrature = cost_quadrature_max_error(30, 106);
    push("cost_closed_forms", quadrature <= 1e-8, format!("max rel err {quadrature:.2e}"));

    CheckReport { results }
}

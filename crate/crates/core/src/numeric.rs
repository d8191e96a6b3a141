//! Small numeric utilities shared across the crate: compensated summation,
//! adaptive quadrature, scalar minimization, and seed mixing.

/// Neumaier-compensated running sum.
///
/// The cost and elapsed-time accumulators grow by millions of small
/// increments over a run; plain `f64` addition would shed low-order bits and
/// break the bookkeeping identity checked by the test suite.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new(initial: f64) -> Self {
        Self { sum: initial, compensation: 0.0 }
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Adaptive Simpson quadrature of `f` over `[lo, hi]` with absolute
/// tolerance `tol`, with the usual Richardson correction term.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }

    #[allow(clippy::too_many_arguments)]
    fn refine<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let correction = left + right - whole;
        if depth == 0 || correction.abs() <= 15.0 * tol {
            left + right + correction / 15.0
        } else {
            // Never ask a child for more accuracy than the segment's own
            // rounding noise supports, or noisy integrands recurse forever.
            let child_tol = (0.5 * tol).max(f64::EPSILON * (left.abs() + right.abs()));
            refine(f, a, fa, m, fm, lm, flm, left, child_tol, depth - 1)
                + refine(f, m, fm, b, fb, rm, frm, right, child_tol, depth - 1)
        }
    }

    if lo == hi {
        return 0.0;
    }
    let (fa, fb) = (f(lo), f(hi));
    let (whole, m, fm) = simpson(f, lo, fa, hi, fb);
    refine(f, lo, fa, hi, fb, m, fm, whole, tol, 48)
}

/// Golden-section search for a minimum of `f` on `[lo, hi]`.
///
/// Returns `(argmin, min)` once the bracket is narrower than `tol`. Assumes
/// `f` is unimodal on the bracket; on a flat or noisy response it still
/// converges to a point with value no worse than the bracket interior probes.
pub fn golden_section_min<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        }
    }
    let mid = 0.5 * (lo + hi);
    (mid, f(mid))
}

/// splitmix64 finalizer; the standard 64-bit avalanche mix.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable, platform-independent combination of a base seed and an index:
/// `splitmix64(base XOR index * 0x9E3779B97F4A7C15)`.
///
/// Used to derive per-run seeds from `(master_seed, run_index)` and per-run
/// stream seeds from `(run_seed, stream_id)`; pure integer arithmetic, so
/// the mapping is identical on every platform.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (values.len() - 1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_lost_bits() {
        let mut acc = CompensatedSum::new(1.0);
        for _ in 0..10_000_000 {
            acc.add(1e-16);
        }
        // Plain f64 summation would return exactly 1.0 here.
        let expected = 1.0 + 1e-16 * 1e7;
        assert!((acc.value() - expected).abs() < 1e-12);
    }

    #[test]
    fn integrate_polynomial_exactly() {
        let v = integrate(&|t: f64| t * t, 0.0, 3.0, 1e-12);
        assert!((v - 9.0).abs() < 1e-10);
    }

    #[test]
    fn integrate_gaussian_mass() {
        let v = integrate(
            &|t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            -10.0,
            10.0,
            1e-12,
        );
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn golden_section_finds_parabola_min() {
        // The offset parabola is flat to double precision within ~2e-8 of
        // the minimum, which bounds the locatable accuracy.
        let (x, fx) = golden_section_min(|t| (t - 1.25) * (t - 1.25) + 2.0, 0.0, 3.0, 1e-10);
        assert!((x - 1.25).abs() < 1e-7);
        assert!((fx - 2.0).abs() < 1e-12);

        let (x, fx) = golden_section_min(|t| (t - 1.25) * (t - 1.25), 0.0, 3.0, 1e-10);
        assert!((x - 1.25).abs() < 1e-9);
        assert!(fx < 1e-18);
    }

    #[test]
    fn mix_seed_is_stable_and_spreads() {
        // Frozen values guard against accidental changes to the mixing
        // function; reproducibility of archived runs depends on it.
        assert_eq!(mix_seed(0, 0), splitmix64(0));
        assert_ne!(mix_seed(42, 0), mix_seed(42, 1));
        assert_ne!(mix_seed(42, 0), mix_seed(43, 0));
    }

    #[test]
    fn mean_and_std_basics() {
        let (m, s) = mean_and_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15);
        assert!((s - 1.0).abs() < 1e-15);
        let (_, s1) = mean_and_std(&[5.0]);
        assert_eq!(s1, 0.0);
    }
}

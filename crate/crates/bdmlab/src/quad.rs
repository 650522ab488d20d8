//! Numerical quadrature primitives.
//!
//! Two integrators back the mutation-kernel transforms: Gauss-Hermite rules
//! for Gaussian kernels (the integrand is `exp(linear) * Gaussian`, which the
//! rule handles to machine precision at modest orders) and adaptive Simpson
//! for everything defined on a finite interval. Nodes and weights are always
//! computed in `f64` and converted afterwards; computing a 200-point rule in
//! `f32` would lose the roots entirely.

use crate::scalar::Real;

/// A Gauss-Hermite rule for integrals of the form `∫ f(u) e^{-u²} du`.
///
/// `sum_i weights[i] * f(nodes[i])` integrates polynomials of degree
/// `2n - 1` exactly and entire functions like `e^{cu}` to machine precision
/// once the nodes cover the integrand's mass (largest node is ~`√(2n+1)`).
#[derive(Clone, Debug)]
pub struct GaussHermite<S> {
    pub nodes: Vec<S>,
    pub weights: Vec<S>,
}

/// Evaluates the normalized Hermite function pair `(ĥ_n(x), ĥ_{n-1}(x))`.
///
/// The normalized recurrence keeps values in a sane floating range for any
/// order up to [`MAX_ORDER`], unlike the raw physicists' polynomials which
/// overflow near n = 150.
fn hermite_normalized(n: usize, x: f64) -> (f64, f64) {
    // ĥ_0 = π^{-1/4}, ĥ_1 = √2 x π^{-1/4},
    // ĥ_{k+1} = x √(2/(k+1)) ĥ_k − √(k/(k+1)) ĥ_{k−1}.
    let mut prev = 0.0f64;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    for k in 0..n {
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Number of roots of ĥ_n strictly below `x`, by the Sturm property of the
/// orthonormal recurrence: each consecutive sign agreement in
/// `(ĥ_0, ..., ĥ_n)(x)` is one eigenvalue of the Jacobi matrix below `x`.
fn hermite_roots_below(n: usize, x: f64) -> usize {
    let mut prev = 0.0f64;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    let mut count = 0;
    for k in 0..n {
        let kf = k as f64;
        let mut next = x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        if next == 0.0 {
            // Landing exactly on a root of an intermediate polynomial: treat
            // as an epsilon of the opposite sign, the measure-zero convention.
            next = -cur.signum() * f64::MIN_POSITIVE;
        }
        if next.signum() == cur.signum() {
            count += 1;
        }
        prev = cur;
        cur = next;
        // Rescaling by a positive factor preserves signs and ratios; without
        // it the recurrence overflows beyond the turning point.
        let mag = cur.abs();
        if mag > 1e250 {
            cur /= mag;
            prev /= mag;
        }
    }
    count
}

/// Largest supported rule order; beyond it the weight evaluation at the
/// extreme roots overflows `f64`.
pub const MAX_ORDER: usize = 640;

impl<S: Real> GaussHermite<S> {
    /// Computes the `n`-point rule.
    ///
    /// Roots are isolated by Sturm-count bisection (every root is bracketed
    /// exactly, with no dependence on initial guesses) and polished with two
    /// Newton steps. Panics if `n == 0` or `n > MAX_ORDER`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite order must be positive");
        assert!(n <= MAX_ORDER, "Gauss-Hermite order capped at {MAX_ORDER}");
        let nf = n as f64;
        let bound = (2.0 * nf + 1.0).sqrt() + 1.0;
        let half = n / 2;

        // Positive roots ascending: the j-th root (0-based, over all n) is
        // where the below-count crosses j; by symmetry only j >= ceil(n/2)
        // is computed.
        let mut nodes = vec![0.0f64; n];
        for j in n.div_ceil(2)..n {
            let mut lo = if j > n.div_ceil(2) { nodes[j - 1] } else { 0.0 };
            let mut hi = bound;
            while hi - lo > 1e-14 * bound {
                let mid = 0.5 * (lo + hi);
                if hermite_roots_below(n, mid) > j {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let mut z = 0.5 * (lo + hi);
            // Newton polish; the bisected bracket keeps the step tiny.
            for _ in 0..3 {
                let (h, h_lower) = hermite_normalized(n, z);
                // ĥ_n'(x) = √(2n) ĥ_{n−1}(x)
                let step = h / ((2.0 * nf).sqrt() * h_lower);
                if !step.is_finite() || step.abs() > 4.0 * (hi - lo) {
                    break;
                }
                z -= step;
            }
            nodes[j] = z;
        }
        for i in 0..half {
            nodes[i] = -nodes[n - 1 - i];
        }
        if n % 2 == 1 {
            nodes[half] = 0.0;
        }

        let mut weights = vec![0.0f64; n];
        for i in 0..n {
            let (_, h_lower) = hermite_normalized(n, nodes[i]);
            // w_i = 2 / (ĥ_n'(x_i))² = 1 / (n ĥ_{n−1}(x_i)²)
            weights[i] = 1.0 / (nf * h_lower * h_lower);
        }

        GaussHermite {
            nodes: nodes.into_iter().map(S::of).collect(),
            weights: weights.into_iter().map(S::of).collect(),
        }
    }

    /// Largest node of the rule; callers use it to check integrand coverage.
    pub fn max_node(&self) -> S {
        *self.nodes.last().expect("rule has at least one node")
    }
}

/// Adaptive Simpson integration of `f` over `[a, b]`.
///
/// Recursion splits an interval while the local Richardson error estimate
/// exceeds its share of `tol`; `max_depth` bounds the recursion (the error
/// estimate of a pathological integrand can stall). Accuracy is driven by the
/// absolute tolerance, as the kernel integrands are O(1) after normalization.
pub fn adaptive_simpson<S: Real>(f: &impl Fn(S) -> S, a: S, b: S, tol: S, max_depth: u32) -> S {
    let two = S::of(2.0);
    let m = (a + b) / two;
    let fa = f(a);
    let fb = f(b);
    let fm = f(m);
    let whole = simpson_rule(a, b, fa, fm, fb);
    simpson_recurse(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

fn simpson_rule<S: Real>(a: S, b: S, fa: S, fm: S, fb: S) -> S {
    (b - a) / S::of(6.0) * (fa + S::of(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<S: Real>(
    f: &impl Fn(S) -> S,
    a: S,
    b: S,
    fa: S,
    fm: S,
    fb: S,
    whole: S,
    tol: S,
    depth: u32,
) -> S {
    let two = S::of(2.0);
    let m = (a + b) / two;
    let lm = (a + m) / two;
    let rm = (m + b) / two;
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_rule(a, m, fa, flm, fm);
    let right = simpson_rule(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= S::of(15.0) * tol {
        // Richardson extrapolation of the two half-interval estimates.
        left + right + delta / S::of(15.0)
    } else {
        let half_tol = tol / two;
        simpson_recurse(f, a, m, fa, flm, fm, left, half_tol, depth - 1)
            + simpson_recurse(f, m, b, fm, frm, fb, right, half_tol, depth - 1)
    }
}

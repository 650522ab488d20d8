//! Mutation kernels and their transforms.
//!
//! A mutation kernel is an even probability density G with all the
//! exponential moments the run needs. The module evaluates
//!
//! - the Hamiltonian `H(alpha) = ∫ (e^{alpha y} - 1) G(y) dy` together with
//!   its first two derivatives,
//! - the inverse of `H'` (a strictly increasing bijection of the reals),
//! - the Lagrangian `L(p, v) = sup_alpha (alpha v - p H(alpha))`, the convex
//!   conjugate that prices trait velocity `v` at mutation rate `p`,
//! - jump samples distributed as G.
//!
//! Gaussian kernels integrate by Gauss-Hermite quadrature, two-sided
//! exponential kernels use their closed forms, tabulated densities use
//! adaptive Simpson per table segment. Every evaluation is guarded by
//! `alpha_max`: configurations that could overflow `exp` are rejected at
//! construction, so evaluation never returns an IEEE infinity.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use thiserror::Error;

use crate::quad::{adaptive_simpson, GaussHermite};
use crate::scalar::Real;

/// Default `alpha_max` when a kernel is built without an explicit bound.
pub const DEFAULT_ALPHA_MAX: f64 = 20.0;
/// Default Gauss-Hermite order for Gaussian kernels (raised automatically
/// when `sigma * alpha_max` needs more coverage).
pub const DEFAULT_QUADRATURE_ORDER: usize = 200;
/// Default relative tolerance for the `H'` Newton inversion.
pub const DEFAULT_NEWTON_TOL: f64 = 1e-12;
/// Default iteration cap for the `H'` Newton inversion.
pub const DEFAULT_NEWTON_MAX_ITER: usize = 100;

/// Exponent budget kept below `exp`'s overflow threshold (~709) with margin.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("alpha {alpha} outside the configured domain [-{alpha_max}, {alpha_max}]")]
    AlphaOutOfDomain { alpha: f64, alpha_max: f64 },
    #[error("value saturates the kernel's representable range: {0}")]
    Saturation(String),
    #[error(
        "H' inversion did not converge after {iters} iterations; last bracket [{lo}, {hi}]"
    )]
    NonConvergence { iters: usize, lo: f64, hi: f64 },
    #[error("invalid tabulated density: {0}")]
    InvalidTable(String),
}

/// The kernel family and its shape parameters.
#[derive(Clone, Debug)]
pub enum KernelKind<S> {
    /// Centered Gaussian with standard deviation `sigma`.
    Gaussian { sigma: S },
    /// Two-sided (Laplace) density `lambda/2 * e^{-lambda |y|}`; exponential
    /// moments exist only for `|alpha| < lambda`.
    TwoSidedExponential { lambda: S },
    /// Even density given by sorted `(y, G(y))` nodes with linear
    /// interpolation; symmetrized by averaging `G(y)` and `G(-y)`.
    TabulatedSymmetricDensity { nodes: Vec<(S, S)> },
}

/// `H(alpha)` and its first two derivatives at one point.
#[derive(Clone, Copy, Debug)]
pub struct HValue<S> {
    pub h: S,
    pub h_prime: S,
    pub h_second: S,
}

/// Gauss-Hermite data specialized to one Gaussian kernel: abscissas of the
/// physicists' rule plus normalized log-weights, so summands are assembled in
/// log space and never overflow within the validated `alpha` domain.
#[derive(Clone, Debug)]
struct GaussianQuadrature {
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
    /// Sum of exp(log_weights) in node order. Subtracted from the same-order
    /// sum in `gaussian_h`, which makes H(0) = 0 exact rather than O(eps).
    mass: f64,
}

/// Symmetrized tabulated density with its cumulative distribution.
#[derive(Clone, Debug)]
struct TabulatedData {
    ys: Vec<f64>,
    gs: Vec<f64>,
    /// CDF at each node (piecewise quadratic between nodes).
    cdf: Vec<f64>,
    /// Variance of the density, used as the Newton seed scale.
    variance: f64,
}

/// An even mutation density with precomputed quadrature state.
///
/// Immutable after construction and safe to share across workers;
/// [`MutationKernel::sample_jump`] takes the caller's random stream.
#[derive(Clone, Debug)]
pub struct MutationKernel<S> {
    kind: KernelKind<S>,
    alpha_max: S,
    quadrature_order: usize,
    newton_tol: S,
    newton_max_iter: usize,
    gaussian_quad: Option<GaussianQuadrature>,
    table: Option<TabulatedData>,
}

impl<S: Real> MutationKernel<S> {
    /// Builds a Gaussian kernel with default settings; the default domain
    /// bound is lowered for wide kernels so `exp` cannot overflow.
    pub fn gaussian(sigma: S) -> Result<Self, KernelError> {
        let mut alpha_max = S::of(DEFAULT_ALPHA_MAX);
        if sigma.as_f64() > 0.0 {
            let cap = S::of((2.0 * MAX_EXPONENT).sqrt() * (1.0 - 1e-9)) / sigma;
            alpha_max = alpha_max.min(cap);
        }
        Self::new(KernelKind::Gaussian { sigma }, alpha_max)
    }

    /// Builds a two-sided exponential kernel with `alpha_max = lambda - 1`
    /// unless a tighter bound is set afterwards.
    pub fn two_sided_exponential(lambda: S) -> Result<Self, KernelError> {
        let default = S::of(DEFAULT_ALPHA_MAX).min(lambda - S::one());
        Self::new(KernelKind::TwoSidedExponential { lambda }, default)
    }

    /// Builds a tabulated kernel from `(y, G(y))` nodes.
    pub fn tabulated(nodes: Vec<(S, S)>) -> Result<Self, KernelError> {
        Self::new(
            KernelKind::TabulatedSymmetricDensity { nodes },
            S::of(DEFAULT_ALPHA_MAX),
        )
    }

    /// Builds a kernel with an explicit `alpha_max`.
    pub fn new(kind: KernelKind<S>, alpha_max: S) -> Result<Self, KernelError> {
        let kernel = MutationKernel {
            kind,
            alpha_max,
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
            newton_tol: S::of(DEFAULT_NEWTON_TOL),
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
            gaussian_quad: None,
            table: None,
        };
        kernel.validate_and_prepare(true)
    }

    /// Replaces `alpha_max`, revalidating the kernel.
    pub fn with_alpha_max(mut self, alpha_max: S) -> Result<Self, KernelError> {
        self.alpha_max = alpha_max;
        self.validate_and_prepare(true)
    }

    /// Replaces the quadrature order. Orders too small to cover the
    /// integrand at `alpha_max` are rejected rather than silently raised.
    pub fn with_quadrature_order(mut self, order: usize) -> Result<Self, KernelError> {
        self.quadrature_order = order;
        self.validate_and_prepare(false)
    }

    /// Replaces the Newton tolerance and iteration cap.
    pub fn with_newton(mut self, tol: S, max_iter: usize) -> Result<Self, KernelError> {
        if !(tol > S::zero()) || max_iter == 0 {
            return Err(KernelError::InvalidParameter(
                "newton_tol must be > 0 and newton_max_iter >= 1".into(),
            ));
        }
        self.newton_tol = tol;
        self.newton_max_iter = max_iter;
        Ok(self)
    }

    pub fn kind(&self) -> &KernelKind<S> {
        &self.kind
    }

    pub fn alpha_max(&self) -> S {
        self.alpha_max
    }

    pub fn quadrature_order(&self) -> usize {
        self.quadrature_order
    }

    pub fn newton_tol(&self) -> S {
        self.newton_tol
    }

    /// True when the density's support is truncated (tabulated kernels only);
    /// reports flag such kernels as an engineering extension.
    pub fn is_truncated(&self) -> bool {
        matches!(self.kind, KernelKind::TabulatedSymmetricDensity { .. })
    }

    /// Standard deviation of one jump (exact for the analytic kinds,
    /// quadrature-accurate for tabulated ones).
    pub fn jump_std(&self) -> S {
        match &self.kind {
            KernelKind::Gaussian { sigma } => *sigma,
            KernelKind::TwoSidedExponential { lambda } => {
                S::of((2.0f64).sqrt() / lambda.as_f64())
            }
            KernelKind::TabulatedSymmetricDensity { .. } => {
                let table = self.table.as_ref().expect("tabulated kernel prepared");
                S::of(table.variance.sqrt())
            }
        }
    }

    fn validate_and_prepare(mut self, allow_order_raise: bool) -> Result<Self, KernelError> {
        let alpha_max = self.alpha_max.as_f64();
        if !(alpha_max > 0.0) || !alpha_max.is_finite() {
            return Err(KernelError::InvalidParameter(format!(
                "alpha_max must be positive and finite, got {alpha_max}"
            )));
        }
        if self.quadrature_order == 0 {
            return Err(KernelError::InvalidParameter(
                "quadrature_order must be >= 1".into(),
            ));
        }
        match &self.kind {
            KernelKind::Gaussian { sigma } => {
                let sigma = sigma.as_f64();
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(KernelError::InvalidParameter(format!(
                        "gaussian sigma must be positive and finite, got {sigma}"
                    )));
                }
                // exp exponent peaks at (sigma * alpha)^2 / 2.
                if sigma * alpha_max > (2.0 * MAX_EXPONENT).sqrt() {
                    return Err(KernelError::InvalidParameter(format!(
                        "sigma * alpha_max = {} would overflow exp; lower alpha_max",
                        sigma * alpha_max
                    )));
                }
                // The integrand e^{cu - u^2} is centered at u = c/2 with unit
                // width; nodes must reach c/2 + 5 to capture its mass.
                let c_max = std::f64::consts::SQRT_2 * sigma * alpha_max;
                let required_reach = c_max / 2.0 + 5.0;
                let required_order =
                    (((required_reach * required_reach) - 1.0) / 2.0).ceil() as usize + 1;
                if self.quadrature_order < required_order {
                    if allow_order_raise {
                        self.quadrature_order = required_order.max(DEFAULT_QUADRATURE_ORDER);
                    } else {
                        return Err(KernelError::InvalidParameter(format!(
                            "quadrature_order {} too small for sigma * alpha_max = {}; need >= {}",
                            self.quadrature_order,
                            sigma * alpha_max,
                            required_order
                        )));
                    }
                }
                let rule: GaussHermite<f64> = GaussHermite::new(self.quadrature_order);
                let log_total = rule.weights.iter().copied().sum::<f64>().ln();
                let log_weights: Vec<f64> =
                    rule.weights.iter().map(|w| w.ln() - log_total).collect();
                let mass = log_weights.iter().map(|lw| lw.exp()).sum::<f64>();
                self.gaussian_quad = Some(GaussianQuadrature {
                    nodes: rule.nodes.clone(),
                    log_weights,
                    mass,
                });
                self.table = None;
            }
            KernelKind::TwoSidedExponential { lambda } => {
                let lambda = lambda.as_f64();
                if !(lambda > 1.0) || !lambda.is_finite() {
                    return Err(KernelError::InvalidParameter(format!(
                        "two-sided exponential lambda must be > 1, got {lambda}"
                    )));
                }
                if alpha_max >= lambda {
                    return Err(KernelError::InvalidParameter(format!(
                        "alpha_max {alpha_max} must be < lambda {lambda}: exponential moments diverge"
                    )));
                }
                self.gaussian_quad = None;
                self.table = None;
            }
            KernelKind::TabulatedSymmetricDensity { nodes } => {
                let table = build_table(nodes, alpha_max)?;
                self.table = Some(table);
                self.gaussian_quad = None;
            }
        }
        Ok(self)
    }

    fn check_alpha(&self, alpha: S) -> Result<f64, KernelError> {
        let a = alpha.as_f64();
        if !a.is_finite() || a.abs() > self.alpha_max.as_f64() {
            return Err(KernelError::AlphaOutOfDomain {
                alpha: a,
                alpha_max: self.alpha_max.as_f64(),
            });
        }
        Ok(a)
    }

    /// Evaluates `H`, `H'`, `H''` at `alpha`.
    ///
    /// Guarantees on the validated domain: `H >= 0` with `H(0) = 0` exactly,
    /// `H'` odd and strictly increasing, `H'' > 0`.
    pub fn h_value(&self, alpha: S) -> Result<HValue<S>, KernelError> {
        let a = self.check_alpha(alpha)?;
        match &self.kind {
            KernelKind::Gaussian { sigma } => {
                let quad = self.gaussian_quad.as_ref().expect("gaussian kernel prepared");
                Ok(gaussian_h(quad, sigma.as_f64(), a))
            }
            KernelKind::TwoSidedExponential { lambda } => Ok(laplace_h(lambda.as_f64(), a)),
            KernelKind::TabulatedSymmetricDensity { .. } => {
                let table = self.table.as_ref().expect("tabulated kernel prepared");
                Ok(tabulated_h(table, a))
            }
        }
    }

    /// Inverts `H'`: returns `alpha` with `|H'(alpha) - w| <= newton_tol * (1 + |w|)`.
    ///
    /// `H'` is odd and strictly increasing, so the root is bracketed by
    /// doubling from zero and then polished by safeguarded Newton. Targets
    /// beyond `H'(alpha_max)` are saturation errors.
    pub fn h_prime_inverse(&self, w: S) -> Result<S, KernelError> {
        let target = w.as_f64();
        if !target.is_finite() {
            return Err(KernelError::InvalidParameter(format!(
                "h_prime_inverse target must be finite, got {target}"
            )));
        }
        if target == 0.0 {
            return Ok(S::zero());
        }
        let sign = target.signum();
        let mag = target.abs();
        let alpha_max = self.alpha_max.as_f64();
        let hp = |a: f64| -> HValue<S> {
            self.h_value(S::of(a))
                .expect("bracket stays inside the validated alpha domain")
        };

        // Bracket [lo, hi] with H'(lo) < mag <= H'(hi) by doubling.
        let mut lo = 0.0f64;
        let seed = (mag / self.h_value(S::zero())?.h_second.as_f64().max(1e-300)).min(1.0);
        let mut hi = seed.max(1e-6);
        loop {
            if hi >= alpha_max {
                hi = alpha_max;
                let at_max = hp(hi).h_prime.as_f64();
                if at_max < mag {
                    return Err(KernelError::Saturation(format!(
                        "H'({alpha_max}) = {at_max} < requested {mag}; raise alpha_max"
                    )));
                }
                break;
            }
            if hp(hi).h_prime.as_f64() >= mag {
                break;
            }
            lo = hi;
            hi = (hi * 2.0).min(alpha_max);
        }

        // Safeguarded Newton: steps leaving the bracket fall back to bisection.
        let tol = self.newton_tol.as_f64() * (1.0 + mag);
        let mut x = 0.5 * (lo + hi);
        for _ in 0..self.newton_max_iter {
            let v = hp(x);
            let residual = v.h_prime.as_f64() - mag;
            if residual.abs() <= tol {
                return Ok(S::of(sign * x));
            }
            if residual > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let slope = v.h_second.as_f64();
            let newton = x - residual / slope;
            x = if slope > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Err(KernelError::NonConvergence {
            iters: self.newton_max_iter,
            lo,
            hi,
        })
    }

    /// Evaluates the Lagrangian `L(p_x, v) = sup_alpha (alpha v - p_x H(alpha))`
    /// and the maximizing `alpha`.
    ///
    /// `L >= 0` with equality iff `v = 0`, and `L` is even in `v`.
    pub fn lagrangian(&self, p_x: S, v: S) -> Result<(S, S), KernelError> {
        if !(p_x > S::zero()) {
            return Err(KernelError::InvalidParameter(format!(
                "mutation rate must be positive, got {p_x}"
            )));
        }
        if v == S::zero() {
            return Ok((S::zero(), S::zero()));
        }
        let alpha_star = self.h_prime_inverse(v / p_x)?;
        let h = self.h_value(alpha_star)?.h;
        let l = alpha_star * v - p_x * h;
        // sup over alpha of (alpha*0 - p H(alpha)) = 0, so L >= alpha*v - pH
        // evaluated anywhere; clamp the tiny negative roundoff at v ~ 0.
        Ok((l.max(S::zero()), alpha_star))
    }

    /// Draws one jump from G.
    pub fn sample_jump(&self, rng: &mut impl Rng) -> S {
        match &self.kind {
            KernelKind::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                S::of(sigma.as_f64() * z)
            }
            KernelKind::TwoSidedExponential { lambda } => {
                let e: f64 = Exp::new(lambda.as_f64())
                    .expect("lambda validated at construction")
                    .sample(rng);
                if rng.random::<bool>() {
                    S::of(e)
                } else {
                    S::of(-e)
                }
            }
            KernelKind::TabulatedSymmetricDensity { .. } => {
                let table = self.table.as_ref().expect("tabulated kernel prepared");
                let u: f64 = rng.random();
                S::of(sample_table(table, u))
            }
        }
    }
}

/// Gauss-Hermite evaluation of `H`, `H'`, `H''` for a Gaussian kernel.
///
/// With `y = sqrt(2) sigma u` the three integrals become sums of
/// `exp(c u + log w) * y^k`; assembling the exponent before `exp` keeps every
/// term finite on the validated domain. `H(0) = 0` holds exactly because the
/// subtracted mass is the same sum evaluated at `c = 0`.
fn gaussian_h<S: Real>(quad: &GaussianQuadrature, sigma: f64, alpha: f64) -> HValue<S> {
    let scale = std::f64::consts::SQRT_2 * sigma;
    let c = scale * alpha;
    let mut h = 0.0f64;
    let mut h1 = 0.0f64;
    let mut h2 = 0.0f64;
    for (u, logw) in quad.nodes.iter().zip(&quad.log_weights) {
        let term = (c * u + logw).exp();
        let y = scale * u;
        h += term;
        h1 += y * term;
        h2 += y * y * term;
    }
    HValue {
        h: S::of((h - quad.mass).max(0.0)),
        h_prime: S::of(h1),
        h_second: S::of(h2),
    }
}

/// Closed forms for the two-sided exponential kernel, valid for |alpha| < lambda.
fn laplace_h<S: Real>(lambda: f64, alpha: f64) -> HValue<S> {
    let l2 = lambda * lambda;
    let a2 = alpha * alpha;
    let d = l2 - a2;
    HValue {
        h: S::of(a2 / d),
        h_prime: S::of(2.0 * alpha * l2 / (d * d)),
        h_second: S::of(2.0 * l2 * (l2 + 3.0 * a2) / (d * d * d)),
    }
}

/// Adaptive Simpson evaluation for a tabulated density, segment by segment so
/// the interpolation kinks never degrade the quadrature.
fn tabulated_h<S: Real>(table: &TabulatedData, alpha: f64) -> HValue<S> {
    let mut h = 0.0f64;
    let mut h1 = 0.0f64;
    let mut h2 = 0.0f64;
    for seg in 0..table.ys.len() - 1 {
        let (y0, y1) = (table.ys[seg], table.ys[seg + 1]);
        let (g0, g1) = (table.gs[seg], table.gs[seg + 1]);
        if g0 == 0.0 && g1 == 0.0 {
            continue;
        }
        let slope = (g1 - g0) / (y1 - y0);
        let g = move |y: f64| g0 + slope * (y - y0);
        h += adaptive_simpson(&|y: f64| (alpha * y).exp_m1() * g(y), y0, y1, 1e-14, 30);
        h1 += adaptive_simpson(&|y: f64| y * (alpha * y).exp() * g(y), y0, y1, 1e-14, 30);
        h2 += adaptive_simpson(&|y: f64| y * y * (alpha * y).exp() * g(y), y0, y1, 1e-14, 30);
    }
    HValue {
        h: S::of(h.max(0.0)),
        h_prime: S::of(h1),
        h_second: S::of(h2.max(f64::MIN_POSITIVE)),
    }
}

/// Symmetrizes, validates, and integrates a tabulated density.
fn build_table<S: Real>(nodes: &[(S, S)], alpha_max: f64) -> Result<TabulatedData, KernelError> {
    if nodes.len() < 3 {
        return Err(KernelError::InvalidTable(
            "need at least 3 nodes".into(),
        ));
    }
    let ys: Vec<f64> = nodes.iter().map(|(y, _)| y.as_f64()).collect();
    let gs_in: Vec<f64> = nodes.iter().map(|(_, g)| g.as_f64()).collect();
    for w in ys.windows(2) {
        if !(w[1] > w[0]) {
            return Err(KernelError::InvalidTable(
                "node ordinates must be strictly increasing".into(),
            ));
        }
    }
    if gs_in.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(KernelError::InvalidTable(
            "density values must be finite and nonnegative".into(),
        ));
    }
    // The table is zero-extended beyond its span, so a nonzero edge value
    // would be a jump the piecewise-linear representation cannot carry:
    // mirroring it onto the union grid would smear the jump into a ramp and
    // silently change the total mass.
    let peak = gs_in.iter().cloned().fold(0.0f64, f64::max);
    if gs_in[0] > 1e-9 * peak || *gs_in.last().unwrap() > 1e-9 * peak {
        return Err(KernelError::InvalidTable(
            "density must vanish at the first and last node (zero-extended outside)".into(),
        ));
    }

    // Symmetrize: evaluate the input interpolant at +-y over the union of
    // mirrored abscissas and average. Outside the input span G is zero.
    let eval = |x: f64| -> f64 {
        if x < ys[0] || x > *ys.last().unwrap() {
            return 0.0;
        }
        let idx = ys.partition_point(|y| *y <= x).min(ys.len() - 1).max(1);
        let (y0, y1) = (ys[idx - 1], ys[idx]);
        let (g0, g1) = (gs_in[idx - 1], gs_in[idx]);
        g0 + (g1 - g0) * (x - y0) / (y1 - y0)
    };
    let mut grid: Vec<f64> = ys.iter().flat_map(|y| [*y, -*y]).collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let sym: Vec<f64> = grid
        .iter()
        .map(|y| 0.5 * (eval(*y) + eval(-*y)))
        .collect();

    // Piecewise-linear density integrates exactly by the trapezoid rule.
    let mut mass = 0.0f64;
    let mut variance = 0.0f64;
    let mut cdf = Vec::with_capacity(grid.len());
    cdf.push(0.0);
    for i in 0..grid.len() - 1 {
        let dy = grid[i + 1] - grid[i];
        mass += 0.5 * (sym[i] + sym[i + 1]) * dy;
        cdf.push(mass);
        // Exact second moment of the linear segment.
        let (a, b) = (grid[i], grid[i + 1]);
        let (ga, gb) = (sym[i], sym[i + 1]);
        let m2 = |y: f64| y * y * y / 3.0;
        let m3 = |y: f64| y * y * y * y / 4.0;
        let slope = (gb - ga) / dy;
        let intercept = ga - slope * a;
        variance += intercept * (m2(b) - m2(a)) + slope * (m3(b) - m3(a));
    }
    if (mass - 1.0).abs() > 1e-10 {
        return Err(KernelError::InvalidTable(format!(
            "density must integrate to 1 within 1e-10, got {mass}"
        )));
    }
    let y_max = grid.last().unwrap().abs().max(grid[0].abs());
    if alpha_max * y_max > MAX_EXPONENT {
        return Err(KernelError::InvalidTable(format!(
            "alpha_max * support radius = {} would overflow exp",
            alpha_max * y_max
        )));
    }
    Ok(TabulatedData {
        ys: grid,
        gs: sym,
        cdf,
        variance,
    })
}

/// Inverse-CDF sampling on the piecewise-quadratic CDF of a tabulated density.
fn sample_table(table: &TabulatedData, u: f64) -> f64 {
    let total = *table.cdf.last().unwrap();
    let target = u * total;
    let idx = table
        .cdf
        .partition_point(|c| *c <= target)
        .clamp(1, table.cdf.len() - 1);
    let (y0, y1) = (table.ys[idx - 1], table.ys[idx]);
    let (g0, g1) = (table.gs[idx - 1], table.gs[idx]);
    let rem = target - table.cdf[idx - 1];
    let dy = y1 - y0;
    let slope = (g1 - g0) / dy;
    // Solve g0 t + slope t^2 / 2 = rem for t in [0, dy].
    if slope.abs() < 1e-14 {
        if g0 <= 0.0 {
            return y0;
        }
        return y0 + rem / g0;
    }
    let disc = (g0 * g0 + 2.0 * slope * rem).max(0.0);
    let t = (disc.sqrt() - g0) / slope;
    y0 + t.clamp(0.0, dy)
}

/// Dense interpolation table for the unit-rate Lagrangian
/// `Ltilde(w) = sup_alpha (alpha w - H(alpha))`, so hot loops evaluate
/// `L(p, v) = p * Ltilde(v / p)` without a Newton solve per call.
///
/// Nodes are exact Newton solutions (warm-started along the grid); between
/// nodes a 4-point Lagrange stencil interpolates with error O(h^4), far below
/// the solver's grid tolerances.
#[derive(Clone, Debug)]
pub struct LagrangianTable<S> {
    w_max: f64,
    step: f64,
    values: Vec<f64>,
    alphas: Vec<f64>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Real> LagrangianTable<S> {
    /// Tabulates `Ltilde` on `[-w_max, w_max]` with roughly `h = 0.025`
    /// spacing (clamped to [2^10, 2^16] + 1 points).
    pub fn build(kernel: &MutationKernel<S>, w_max: S) -> Result<Self, KernelError> {
        let w_max = w_max.as_f64();
        if !(w_max > 0.0) || !w_max.is_finite() {
            return Err(KernelError::InvalidParameter(format!(
                "lagrangian table needs positive finite w_max, got {w_max}"
            )));
        }
        let half = ((w_max / 0.025).ceil() as usize).clamp(1 << 10, 1 << 16);
        let n = 2 * half + 1;
        let step = 2.0 * w_max / (n - 1) as f64;
        let mut values = vec![0.0f64; n];
        let mut alphas = vec![0.0f64; n];
        // H' is odd, so solve the positive half and mirror. Warm starts make
        // each Newton solve converge in a couple of iterations.
        for i in half..n {
            let w = -w_max + step * i as f64;
            if w == 0.0 {
                continue;
            }
            let alpha = kernel.h_prime_inverse(S::of(w))?.as_f64();
            let h = kernel.h_value(S::of(alpha))?.h.as_f64();
            values[i] = (alpha * w - h).max(0.0);
            alphas[i] = alpha;
            values[n - 1 - i] = values[i];
            alphas[n - 1 - i] = -alpha;
        }
        Ok(LagrangianTable {
            w_max,
            step,
            values,
            alphas,
            _marker: std::marker::PhantomData,
        })
    }

    pub fn w_max(&self) -> S {
        S::of(self.w_max)
    }

    /// Interpolated `Ltilde(w)`. Panics outside `[-w_max, w_max]`; the solver
    /// sizes the table from its velocity bound so this is unreachable there.
    #[inline]
    pub fn value(&self, w: S) -> S {
        S::of(self.interpolate(w.as_f64(), &self.values))
    }

    /// Interpolated maximizing alpha (diagnostics only).
    #[inline]
    pub fn alpha_star(&self, w: S) -> S {
        S::of(self.interpolate(w.as_f64(), &self.alphas))
    }

    fn interpolate(&self, w: f64, data: &[f64]) -> f64 {
        assert!(
            w.abs() <= self.w_max * (1.0 + 1e-12),
            "lagrangian table queried at w = {w} beyond w_max = {}",
            self.w_max
        );
        let n = data.len();
        let x = (w + self.w_max) / self.step;
        // 4-point stencil centered on the query.
        let i1 = (x.floor() as isize).clamp(1, n as isize - 3) as usize;
        let t = x - i1 as f64;
        let (a, b, c, d) = (data[i1 - 1], data[i1], data[i1 + 1], data[i1 + 2]);
        // Lagrange basis on nodes -1, 0, 1, 2 evaluated at t.
        let w0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let w2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let w3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        a * w0 + b * w1 + c * w2 + d * w3
    }
}

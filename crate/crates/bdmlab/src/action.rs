//! Path cost evaluation: action, running cost, and an independent
//! cross-check.
//!
//! The action of a path is the time integral of the Lagrangian along it; the
//! cost of a path adds the initial exponent at its starting point and the
//! integrated growth rate, and subtracts the action. [`cost_profile`] returns
//! the running cost at every grid time, so callers can read off both the
//! terminal cost and the running minimum that a state constraint controls.
//!
//! Quadrature is one rule everywhere: each segment contributes
//! `dt * L(midpoint trait, segment slope)` to the action and
//! `dt * R(midpoint trait)` to the growth integral. The rule is second-order
//! accurate and exactly zero on constant paths. Piecewise-constant paths with
//! jumps are not absolutely continuous; their action is the dedicated
//! infinity sentinel, never an IEEE infinity.
//!
//! [`action_via_psi`] recomputes the action through the integration-by-parts
//! identity `I = psi f | - integral(f psi' + p(f) H(psi))` with
//! `psi = (H')^{-1}(f' / p(f))`. It shares no quadrature code with
//! [`action`], so agreement between the two is a real consistency check on
//! the kernel transforms.

use std::io::Write as IoWrite;

use thiserror::Error;

use crate::extended::Extended;
use crate::kernel::KernelError;
use crate::path::{GridPath, Interpolation};
use crate::scalar::Real;
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum ActionError {
    #[error("operation requires a piecewise-linear path")]
    RequiresPiecewiseLinear,
    #[error("cross-check requires a uniform time grid")]
    NonUniformGrid,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Running cost of a path at every grid time, with its action.
#[derive(Clone, Debug)]
pub struct CostProfile<S> {
    /// Grid times the profile is evaluated at.
    pub times: Vec<S>,
    /// Running cost F at each grid time; starts at `beta0(f(0))`.
    pub f_values: Vec<S>,
    /// Running action I at each grid time; starts at zero.
    pub action_values: Vec<S>,
    /// Total action of the path.
    pub action: S,
    /// Cost at the final time (last entry of `f_values`).
    pub terminal_cost: S,
    /// Minimum running cost over all grid times.
    pub min_running: S,
}

impl<S: Real> CostProfile<S> {
    /// Writes the profile as CSV with columns `s,F_s,I_s`.
    pub fn write_csv(&self, out: &mut impl IoWrite) -> Result<(), ActionError> {
        writeln!(out, "s,F_s,I_s")?;
        for ((t, f), i) in self
            .times
            .iter()
            .zip(&self.f_values)
            .zip(&self.action_values)
        {
            writeln!(out, "{:?},{:?},{:?}", t.as_f64(), f.as_f64(), i.as_f64())?;
        }
        Ok(())
    }
}

/// Action and growth contribution of one linear segment: the Lagrangian and
/// the growth rate are both read at the segment's midpoint trait.
fn segment_terms<S: Real>(
    scenario: &Scenario<S>,
    t0: S,
    t1: S,
    x0: S,
    x1: S,
) -> Result<(S, S), ActionError> {
    let dt = t1 - t0;
    let mid = (x0 + x1) * S::of(0.5);
    let slope = (x1 - x0) / dt;
    let p_mid = scenario.mutation_at(mid);
    let (l, _) = scenario.kernel().lagrangian(p_mid, slope)?;
    let growth = scenario.growth_at(mid);
    Ok((dt * l, dt * growth))
}

/// Action of a path: the integrated Lagrangian along it.
///
/// Piecewise-linear paths get the midpoint segment rule. Piecewise-constant
/// paths with at least one jump are not absolutely continuous and return the
/// infinity sentinel as a value.
pub fn action<S: Real>(
    scenario: &Scenario<S>,
    path: &GridPath<S>,
) -> Result<Extended<S>, ActionError> {
    if path.interpolation() == Interpolation::PiecewiseConstantRightContinuous {
        let first = path.values()[0];
        if path.values().iter().any(|v| *v != first) {
            return Ok(Extended::PosInf);
        }
        return Ok(Extended::finite(S::zero()));
    }
    let mut total = S::zero();
    for seg in path.segments() {
        let (di, _) = segment_terms(scenario, seg.t0, seg.t1, seg.x0, seg.x1)?;
        total = total + di;
    }
    Ok(Extended::finite(total))
}

/// Running cost profile of a piecewise-linear path.
///
/// `F` starts at `beta0` of the initial position and accumulates
/// `dt * (R(midpoint) - L(midpoint, slope))` per segment, so the profile over
/// a truncated path is a prefix of the profile over the full path.
pub fn cost_profile<S: Real>(
    scenario: &Scenario<S>,
    path: &GridPath<S>,
) -> Result<CostProfile<S>, ActionError> {
    if path.interpolation() != Interpolation::PiecewiseLinear {
        return Err(ActionError::RequiresPiecewiseLinear);
    }
    let n = path.values().len();
    let mut f_values = Vec::with_capacity(n);
    let mut action_values = Vec::with_capacity(n);
    let mut f = scenario.beta0_at(path.values()[0]);
    let mut i = S::zero();
    f_values.push(f);
    action_values.push(i);
    for seg in path.segments() {
        let (di, dg) = segment_terms(scenario, seg.t0, seg.t1, seg.x0, seg.x1)?;
        i = i + di;
        f = f + dg - di;
        f_values.push(f);
        action_values.push(i);
    }
    let min_running = f_values
        .iter()
        .copied()
        .fold(S::infinity(), |a, b| a.min(b));
    Ok(CostProfile {
        times: path.times().to_vec(),
        f_values,
        action_values,
        action: i,
        terminal_cost: f,
        min_running,
    })
}

/// Recomputes the action through the integration-by-parts identity.
///
/// Slopes and the derivative of `psi` use central differences (second-order
/// one-sided stencils at the ends); the remaining integral uses the
/// trapezoid rule. Agreement with [`action`] is O(dt^2) for paths sampled
/// from twice-differentiable functions. Cross-check only; nothing downstream
/// consumes it.
pub fn action_via_psi<S: Real>(
    scenario: &Scenario<S>,
    path: &GridPath<S>,
) -> Result<S, ActionError> {
    if path.interpolation() != Interpolation::PiecewiseLinear {
        return Err(ActionError::RequiresPiecewiseLinear);
    }
    let f = path.values();
    let n = f.len();
    if n == 1 {
        return Ok(S::zero());
    }
    if !path.is_uniform(S::of(1e-9)) {
        return Err(ActionError::NonUniformGrid);
    }
    let dt = path.times()[1] - path.times()[0];
    let slopes = central_differences(f, dt);
    let kernel = scenario.kernel();
    let mut psi = Vec::with_capacity(n);
    for (fk, vk) in f.iter().zip(&slopes) {
        let p = scenario.mutation_at(*fk);
        psi.push(kernel.h_prime_inverse(*vk / p)?);
    }
    let psi_prime = central_differences(&psi, dt);
    // Integrand of the correction term: f psi' + p(f) H(psi).
    let mut integrand = Vec::with_capacity(n);
    for k in 0..n {
        let p = scenario.mutation_at(f[k]);
        let h = kernel.h_value(psi[k])?.h;
        integrand.push(f[k] * psi_prime[k] + p * h);
    }
    let mut correction = S::zero();
    for pair in integrand.windows(2) {
        correction = correction + (pair[0] + pair[1]) * S::of(0.5) * dt;
    }
    Ok(psi[n - 1] * f[n - 1] - psi[0] * f[0] - correction)
}

/// Second-order finite differences on a uniform grid: central in the
/// interior, one-sided three-point stencils at the ends.
fn central_differences<S: Real>(values: &[S], dt: S) -> Vec<S> {
    let n = values.len();
    let two_dt = dt * S::of(2.0);
    if n == 2 {
        let v = (values[1] - values[0]) / dt;
        return vec![v, v];
    }
    let mut out = Vec::with_capacity(n);
    out.push((-S::of(3.0) * values[0] + S::of(4.0) * values[1] - values[2]) / two_dt);
    for k in 1..n - 1 {
        out.push((values[k + 1] - values[k - 1]) / two_dt);
    }
    out.push((S::of(3.0) * values[n - 1] - S::of(4.0) * values[n - 2] + values[n - 3]) / two_dt);
    out
}

/// Largest oscillation of the path over any time window of length `delta`.
pub fn sup_modulus<S: Real>(path: &GridPath<S>, delta: S) -> S {
    let (t_lo, t_hi) = path.domain();
    let times = path.times();
    let mut best = S::zero();
    let mut consider = |a: S| {
        let a = a.max(t_lo).min(t_hi);
        let b = (a + delta).min(t_hi);
        let mut lo = path.value_at(a).expect("window start clamped into domain");
        let mut hi = lo;
        let v = path.value_at(b).expect("window end clamped into domain");
        lo = lo.min(v);
        hi = hi.max(v);
        for (t, x) in times.iter().zip(path.values()) {
            if *t > a && *t < b {
                lo = lo.min(*x);
                hi = hi.max(*x);
            }
        }
        best = best.max(hi - lo);
    };
    for t in times {
        consider(*t);
        consider(*t - delta);
    }
    best
}

/// Radius of the sup-norm ball guaranteed to contain the Skorohod ball of
/// radius `eps` around the path: `2 eps + sup_modulus(f, (e^eps - 1) T)`.
pub fn sup_radius_for_skorohod<S: Real>(path: &GridPath<S>, eps: S) -> S {
    let (t_lo, t_hi) = path.domain();
    let window = (eps.exp() - S::one()) * (t_hi - t_lo);
    S::of(2.0) * eps + sup_modulus(path, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::MutationKernel;
    use crate::scenario::{Bounds, RateFn};

    type Sc = Scenario<f64>;

    /// Unit-rate variant: p = 1 everywhere, Gaussian unit kernel.
    fn unit_mutation_scenario() -> Sc {
        Scenario::new(
            "unit-mutation",
            RateFn::Constant { value: 1.0 },
            RateFn::Constant { value: 0.5 },
            RateFn::Constant { value: 1.0 },
            RateFn::PeakAbs {
                peak: 1.0,
                slope: 1.0,
                center: 0.0,
            },
            MutationKernel::gaussian(1.0).unwrap(),
            Bounds {
                birth_max: 1.0,
                mutation_max: 1.0,
                mutation_min: 1.0,
                growth_max: 1.5,
                beta0_max: 1.0,
                decay_alpha: 1.0,
            },
        )
        .unwrap()
    }

    fn line_path(x0: f64, x1: f64, t: f64, n: usize) -> GridPath<f64> {
        GridPath::sample(0.0, t, n, |s| x0 + (x1 - x0) * s / t).unwrap()
    }

    fn sin_path(amplitude: f64, dt: f64) -> GridPath<f64> {
        let n = (1.0 / dt).round() as usize;
        GridPath::sample(0.0, 1.0, n, |s| {
            amplitude * (2.0 * std::f64::consts::PI * s).sin()
        })
        .unwrap()
    }

    #[test]
    fn constant_path_has_zero_action() {
        let s = Sc::constant_supercritical();
        let path = GridPath::constant(0.0, 1.0, 0.7).unwrap();
        assert_eq!(action(&s, &path).unwrap(), Extended::finite(0.0));
    }

    #[test]
    fn straight_line_with_unit_slope_cost() {
        // Unit kernel, p = 1, slope e^(1/2): the optimal tilt is 1 and the
        // Lagrangian is exactly 1, so the action over [0,1] is 1.
        let s = unit_mutation_scenario();
        let v = (0.5f64).exp();
        let path = line_path(0.0, v, 1.0, 11);
        let a = action(&s, &path).unwrap().as_finite().unwrap();
        assert!((a - 1.0).abs() < 1e-9, "action = {a}");
    }

    #[test]
    fn jump_path_hits_infinity_sentinel() {
        let s = Sc::constant_supercritical();
        let jumpy = GridPath::new(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.0, 0.3],
            Interpolation::PiecewiseConstantRightContinuous,
        )
        .unwrap();
        assert_eq!(action(&s, &jumpy).unwrap(), Extended::PosInf);
        let flat = GridPath::new(
            vec![0.0, 0.5, 1.0],
            vec![0.2, 0.2, 0.2],
            Interpolation::PiecewiseConstantRightContinuous,
        )
        .unwrap();
        assert_eq!(action(&s, &flat).unwrap(), Extended::finite(0.0));
    }

    #[test]
    fn stay_put_cost_profile_is_linear_growth() {
        let s = Sc::constant_supercritical();
        let path = GridPath::sample(0.0, 1.0, 100, |_| 0.0).unwrap();
        let profile = cost_profile(&s, &path).unwrap();
        assert!((profile.terminal_cost - 2.0).abs() < 1e-12);
        assert!((profile.min_running - 1.0).abs() < 1e-12);
        assert_eq!(profile.action, 0.0);
        // Running cost rises linearly: F at time s is 1 + s.
        assert!((profile.f_values[50] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn single_point_profile_is_initial_exponent() {
        let s = Sc::constant_supercritical();
        let path = GridPath::new(vec![0.0], vec![0.0], Interpolation::PiecewiseLinear).unwrap();
        let profile = cost_profile(&s, &path).unwrap();
        assert_eq!(profile.f_values, vec![1.0]);
        assert_eq!(profile.terminal_cost, 1.0);
        assert_eq!(profile.min_running, 1.0);
        assert_eq!(profile.action, 0.0);
    }

    #[test]
    fn profile_of_truncation_is_prefix() {
        let s = Sc::quadratic();
        let path = sin_path(0.4, 0.01);
        let full = cost_profile(&s, &path).unwrap();
        let half = GridPath::new(
            path.times()[..51].to_vec(),
            path.values()[..51].to_vec(),
            Interpolation::PiecewiseLinear,
        )
        .unwrap();
        let prefix = cost_profile(&s, &half).unwrap();
        for k in 0..=50 {
            assert!((full.f_values[k] - prefix.f_values[k]).abs() < 1e-12);
        }
    }

    /// Crosses the valley at speed 4 during [0, 1], then sits on the growing
    /// right bank until 1.5.
    fn crossing_path(n: usize) -> GridPath<f64> {
        let times: Vec<f64> = (0..=n).map(|i| 1.5 * i as f64 / n as f64).collect();
        let values: Vec<f64> = times.iter().map(|&t| (-2.0 + 4.0 * t).min(2.0)).collect();
        GridPath::new(times, values, Interpolation::PiecewiseLinear).unwrap()
    }

    #[test]
    fn valley_crossing_dips_below_terminal_cost() {
        let s = Sc::valley();
        let fine = cost_profile(&s, &crossing_path(15_000)).unwrap();
        assert!(
            fine.min_running < fine.terminal_cost - 0.25,
            "min {} vs terminal {}",
            fine.min_running,
            fine.terminal_cost
        );
        // The crossing itself drives the exponent below zero.
        assert!(fine.min_running < 0.0);
        // A practical grid agrees with the fine one.
        let coarse = cost_profile(&s, &crossing_path(1_500)).unwrap();
        assert!((coarse.min_running - fine.min_running).abs() < 2e-3);
        assert!((coarse.terminal_cost - fine.terminal_cost).abs() < 2e-3);
    }

    #[test]
    fn action_is_reversal_invariant_for_constant_mutation_rate() {
        let s = Sc::constant_supercritical();
        let path = sin_path(0.3, 0.01);
        let reversed = GridPath::new(
            path.times().to_vec(),
            path.values().iter().rev().copied().collect(),
            Interpolation::PiecewiseLinear,
        )
        .unwrap();
        let a = action(&s, &path).unwrap().as_finite().unwrap();
        let b = action(&s, &reversed).unwrap().as_finite().unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn action_adds_across_a_split() {
        let s = Sc::quadratic();
        let path = sin_path(0.5, 0.01);
        let k = 37;
        let left = GridPath::new(
            path.times()[..=k].to_vec(),
            path.values()[..=k].to_vec(),
            Interpolation::PiecewiseLinear,
        )
        .unwrap();
        let right = GridPath::new(
            path.times()[k..].to_vec(),
            path.values()[k..].to_vec(),
            Interpolation::PiecewiseLinear,
        )
        .unwrap();
        let full = action(&s, &path).unwrap().as_finite().unwrap();
        let sum = action(&s, &left).unwrap().as_finite().unwrap()
            + action(&s, &right).unwrap().as_finite().unwrap();
        assert!((full - sum).abs() < 1e-12);
    }

    #[test]
    fn doubling_slopes_more_than_doubles_action() {
        let s = Sc::constant_supercritical();
        let path = sin_path(0.3, 0.01);
        let doubled = GridPath::new(
            path.times().to_vec(),
            path.values().iter().map(|v| 2.0 * v).collect(),
            Interpolation::PiecewiseLinear,
        )
        .unwrap();
        let a = action(&s, &path).unwrap().as_finite().unwrap();
        let a2 = action(&s, &doubled).unwrap().as_finite().unwrap();
        assert!(a2 > 2.0 * a * 1.05, "a = {a}, doubled = {a2}");
    }

    #[test]
    fn refinement_converges_at_second_order() {
        let s = Sc::constant_supercritical();
        let coarse = action(&s, &sin_path(0.3, 0.02)).unwrap().as_finite().unwrap();
        let mid = action(&s, &sin_path(0.3, 0.01)).unwrap().as_finite().unwrap();
        let fine = action(&s, &sin_path(0.3, 0.005)).unwrap().as_finite().unwrap();
        let d1 = (coarse - mid).abs();
        let d2 = (mid - fine).abs();
        assert!(d1 > 0.0 && d2 > 0.0);
        assert!(d1 / d2 > 3.0, "refinement ratio {}", d1 / d2);
    }

    #[test]
    fn psi_identity_is_exact_on_straight_lines() {
        let s = unit_mutation_scenario();
        let path = line_path(-0.3, 0.9, 1.0, 51);
        let direct = action(&s, &path).unwrap().as_finite().unwrap();
        let via_psi = action_via_psi(&s, &path).unwrap();
        assert!((direct - via_psi).abs() < 1e-10);
    }

    #[test]
    fn psi_identity_agrees_on_smooth_paths_at_second_order() {
        let s = Sc::constant_supercritical();
        let gap = |dt: f64| {
            let path = sin_path(0.3, dt);
            let direct = action(&s, &path).unwrap().as_finite().unwrap();
            let via_psi = action_via_psi(&s, &path).unwrap();
            (direct - via_psi).abs()
        };
        let g1 = gap(1e-3);
        assert!(g1 <= 1e-3, "gap at dt=1e-3: {g1}");
        let g2 = gap(5e-4);
        assert!(g1 / g2 >= 3.0, "shrink factor {}", g1 / g2);
    }

    #[test]
    fn modulus_of_tent_path() {
        let path: GridPath<f64> =
            GridPath::sample(0.0, 1.0, 200, |s: f64| (2.0 * s - 1.0).abs()).unwrap();
        let w = sup_modulus(&path, 0.2);
        assert!((w - 0.4).abs() < 1e-12, "modulus = {w}");
        // Window longer than the domain sees the full range.
        assert!((sup_modulus(&path, 5.0) - 1.0).abs() < 1e-12);
        let eta = sup_radius_for_skorohod(&path, 0.1);
        assert!(eta > 0.2 && eta.is_finite());
    }

    #[test]
    fn profile_csv_has_three_columns() {
        let s = Sc::constant_supercritical();
        let path = GridPath::sample(0.0, 1.0, 5, |_| 0.0).unwrap();
        let profile = cost_profile(&s, &path).unwrap();
        let mut buf = Vec::new();
        profile.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("s,F_s,I_s"));
        assert_eq!(lines.count(), 6);
    }
}

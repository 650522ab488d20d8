//! Trait paths on a time grid.
//!
//! A [`GridPath`] stores knot times and values plus an interpolation rule:
//! piecewise linear for optimizer and reference paths, piecewise constant
//! (right-continuous) for jump trajectories such as simulated lineages. The
//! module evaluates paths, measures exact sup-norm distances between them,
//! and reads/writes the two-column CSV format used across the toolkit.
//!
//! Sup distances are exact, not sampled: between consecutive knots of the
//! merged grid both paths are affine or constant, so the difference attains
//! its maximum at a knot or a left limit at a knot.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("a path needs at least one knot")]
    Empty,
    #[error("knot times must be strictly increasing (knot {index}: {prev} then {next})")]
    NonIncreasingTimes { index: usize, prev: f64, next: f64 },
    #[error("times and values lengths differ: {times} vs {values}")]
    LengthMismatch { times: usize, values: usize },
    #[error("non-finite knot at index {0}")]
    NonFinite(usize),
    #[error("paths cover different time spans: [{lo_a}, {hi_a}] vs [{lo_b}, {hi_b}]")]
    DomainMismatch {
        lo_a: f64,
        hi_a: f64,
        lo_b: f64,
        hi_b: f64,
    },
    #[error("time {t} outside the path domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("malformed path CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How values between knots are reconstructed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    PiecewiseLinear,
    PiecewiseConstantRightContinuous,
}

/// One inter-knot segment: `x0` at `t0`, `x1` at `t1`. Under right-continuous
/// constant interpolation the path holds `x0` on `[t0, t1)` and jumps at `t1`.
#[derive(Clone, Copy, Debug)]
pub struct Segment<S> {
    pub t0: S,
    pub t1: S,
    pub x0: S,
    pub x1: S,
}

/// A trait path sampled at knot times.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPath<S> {
    times: Vec<S>,
    values: Vec<S>,
    interpolation: Interpolation,
}

/// Relative slack when clamping query times to the domain edges; absorbs the
/// roundoff of accumulating uniform steps.
const EDGE_SLACK: f64 = 1e-9;

impl<S: Real> GridPath<S> {
    /// Builds a path from explicit knots.
    pub fn new(
        times: Vec<S>,
        values: Vec<S>,
        interpolation: Interpolation,
    ) -> Result<Self, PathError> {
        if times.len() != values.len() {
            return Err(PathError::LengthMismatch {
                times: times.len(),
                values: values.len(),
            });
        }
        // A single knot is a degenerate but legal path (a point in time);
        // it arises from zero-horizon runs and backtracking at t = 0.
        if times.is_empty() {
            return Err(PathError::Empty);
        }
        for (i, pair) in times.windows(2).enumerate() {
            if !(pair[1] > pair[0]) {
                return Err(PathError::NonIncreasingTimes {
                    index: i + 1,
                    prev: pair[0].as_f64(),
                    next: pair[1].as_f64(),
                });
            }
        }
        if let Some(i) = times
            .iter()
            .chain(values.iter())
            .position(|v| !v.is_finite())
        {
            return Err(PathError::NonFinite(i % times.len()));
        }
        Ok(GridPath {
            times,
            values,
            interpolation,
        })
    }

    /// Builds a path on the uniform grid `t0, t0 + dt, ...` with one time per
    /// value.
    pub fn uniform(
        t0: S,
        dt: S,
        values: Vec<S>,
        interpolation: Interpolation,
    ) -> Result<Self, PathError> {
        let times = (0..values.len())
            .map(|i| t0 + dt * S::of(i as f64))
            .collect();
        Self::new(times, values, interpolation)
    }

    /// Constant path `x` on `[t0, t1]`.
    pub fn constant(t0: S, t1: S, x: S) -> Result<Self, PathError> {
        Self::new(vec![t0, t1], vec![x, x], Interpolation::PiecewiseLinear)
    }

    /// Samples a closure on a uniform grid with `n` steps (`n + 1` knots).
    pub fn sample(
        t0: S,
        t1: S,
        n: usize,
        f: impl Fn(S) -> S,
    ) -> Result<Self, PathError> {
        let dt = (t1 - t0) / S::of(n as f64);
        let values = (0..=n).map(|i| f(t0 + dt * S::of(i as f64))).collect();
        Self::uniform(t0, dt, values, Interpolation::PiecewiseLinear)
    }

    pub fn times(&self) -> &[S] {
        &self.times
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    /// Closed time span `[start, end]`.
    pub fn domain(&self) -> (S, S) {
        (self.times[0], *self.times.last().unwrap())
    }

    /// True when knot spacing is uniform to relative tolerance `tol`.
    pub fn is_uniform(&self, tol: S) -> bool {
        if self.times.len() < 3 {
            return true;
        }
        let dt0 = self.times[1] - self.times[0];
        self.times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt0).abs() <= tol * dt0.abs())
    }

    fn clamp_to_domain(&self, t: S) -> Result<S, PathError> {
        let (lo, hi) = self.domain();
        let slack = S::of(EDGE_SLACK) * (S::one() + t.abs());
        if t < lo - slack || t > hi + slack {
            return Err(PathError::OutOfDomain {
                t: t.as_f64(),
                lo: lo.as_f64(),
                hi: hi.as_f64(),
            });
        }
        Ok(t.max(lo).min(hi))
    }

    /// Path value at `t` (right-continuous at jumps). Times within a small
    /// relative slack of the domain edges are clamped; anything farther out
    /// is an error.
    pub fn value_at(&self, t: S) -> Result<S, PathError> {
        let t = self.clamp_to_domain(t)?;
        Ok(self.eval_clamped(t, false))
    }

    /// Left limit at `t`; differs from `value_at` only at the jump times of a
    /// piecewise-constant path.
    pub fn left_limit_at(&self, t: S) -> Result<S, PathError> {
        let t = self.clamp_to_domain(t)?;
        Ok(self.eval_clamped(t, true))
    }

    fn eval_clamped(&self, t: S, left: bool) -> S {
        let n = self.times.len();
        if n == 1 {
            return self.values[0];
        }
        // Index of the segment containing t: last knot <= t (or < t for the
        // left limit, so a jump at t reads the previous plateau).
        let cut = if left {
            self.times.partition_point(|u| *u < t)
        } else {
            self.times.partition_point(|u| *u <= t)
        };
        let i = cut.saturating_sub(1).min(n - 2);
        match self.interpolation {
            Interpolation::PiecewiseConstantRightContinuous => {
                if !left && t >= self.times[n - 1] {
                    self.values[n - 1]
                } else {
                    self.values[i]
                }
            }
            Interpolation::PiecewiseLinear => {
                let (t0, t1) = (self.times[i], self.times[i + 1]);
                let frac = (t - t0) / (t1 - t0);
                self.values[i] + (self.values[i + 1] - self.values[i]) * frac
            }
        }
    }

    /// Iterates inter-knot segments in time order.
    pub fn segments(&self) -> impl Iterator<Item = Segment<S>> + '_ {
        self.times.windows(2).zip(self.values.windows(2)).map(|(t, x)| Segment {
            t0: t[0],
            t1: t[1],
            x0: x[0],
            x1: x[1],
        })
    }

    /// Exact sup-norm distance to `other` over their (identical) domain.
    ///
    /// Both paths are affine between consecutive knots of the merged grid, so
    /// checking knot values and left limits at knots is exhaustive.
    pub fn sup_distance(&self, other: &GridPath<S>) -> Result<S, PathError> {
        let (lo_a, hi_a) = self.domain();
        let (lo_b, hi_b) = other.domain();
        let slack = S::of(EDGE_SLACK) * (S::one() + hi_a.abs().max(hi_b.abs()));
        if (lo_a - lo_b).abs() > slack || (hi_a - hi_b).abs() > slack {
            return Err(PathError::DomainMismatch {
                lo_a: lo_a.as_f64(),
                hi_a: hi_a.as_f64(),
                lo_b: lo_b.as_f64(),
                hi_b: hi_b.as_f64(),
            });
        }
        let lo = lo_a.max(lo_b);
        let hi = hi_a.min(hi_b);
        let mut worst = S::zero();
        let mut check = |t: S, left: bool| {
            let a = self.eval_clamped(t, left);
            let b = other.eval_clamped(t, left);
            worst = worst.max((a - b).abs());
        };
        for t in self.times.iter().chain(other.times.iter()) {
            let t = (*t).max(lo).min(hi);
            check(t, false);
            if t > lo {
                check(t, true);
            }
        }
        Ok(worst)
    }

    /// Writes `time,value` rows with a header.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<(), PathError> {
        writeln!(out, "time,value")?;
        for (t, x) in self.times.iter().zip(&self.values) {
            writeln!(out, "{t},{x}")?;
        }
        Ok(())
    }

    /// Reads `time,value` rows (header optional) as a piecewise-linear path.
    pub fn read_csv(input: &mut impl BufRead) -> Result<Self, PathError> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let (t_raw, x_raw) = match (parts.next(), parts.next(), parts.next()) {
                (Some(t), Some(x), None) => (t.trim(), x.trim()),
                _ => {
                    return Err(PathError::Csv(format!(
                        "line {}: expected two comma-separated columns",
                        lineno + 1
                    )))
                }
            };
            if lineno == 0 && t_raw.parse::<f64>().is_err() {
                continue;
            }
            let t: f64 = t_raw.parse().map_err(|_| {
                PathError::Csv(format!("line {}: bad time {t_raw:?}", lineno + 1))
            })?;
            let x: f64 = x_raw.parse().map_err(|_| {
                PathError::Csv(format!("line {}: bad value {x_raw:?}", lineno + 1))
            })?;
            times.push(S::of(t));
            values.push(S::of(x));
        }
        Self::new(times, values, Interpolation::PiecewiseLinear)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type P = GridPath<f64>;

    #[test]
    fn construction_rejects_bad_knots() {
        assert!(matches!(
            P::new(vec![], vec![], Interpolation::PiecewiseLinear),
            Err(PathError::Empty)
        ));
        assert!(matches!(
            P::new(vec![0.0, 0.0], vec![1.0, 2.0], Interpolation::PiecewiseLinear),
            Err(PathError::NonIncreasingTimes { .. })
        ));
        assert!(matches!(
            P::new(vec![0.0, 1.0], vec![1.0], Interpolation::PiecewiseLinear),
            Err(PathError::LengthMismatch { .. })
        ));
        assert!(matches!(
            P::new(vec![0.0, 1.0], vec![1.0, f64::NAN], Interpolation::PiecewiseLinear),
            Err(PathError::NonFinite(_))
        ));
    }

    #[test]
    fn single_knot_path_is_a_point() {
        let p = P::new(vec![0.5], vec![3.0], Interpolation::PiecewiseLinear).unwrap();
        assert_eq!(p.domain(), (0.5, 0.5));
        assert_eq!(p.value_at(0.5).unwrap(), 3.0);
        assert_eq!(p.left_limit_at(0.5).unwrap(), 3.0);
        assert!(p.value_at(0.6).is_err());
        assert_eq!(p.segments().count(), 0);
        assert!(p.is_uniform(1e-9));
    }

    #[test]
    fn linear_evaluation_interpolates() {
        let p = P::uniform(0.0, 0.5, vec![0.0, 1.0, 0.0], Interpolation::PiecewiseLinear)
            .unwrap();
        assert_eq!(p.value_at(0.25).unwrap(), 0.5);
        assert_eq!(p.value_at(0.5).unwrap(), 1.0);
        assert_eq!(p.value_at(0.75).unwrap(), 0.5);
        assert_eq!(p.value_at(1.0).unwrap(), 0.0);
        assert_eq!(p.left_limit_at(0.5).unwrap(), 1.0);
        assert!(p.value_at(1.2).is_err());
        assert_eq!(p.value_at(1.0 + 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn constant_hold_evaluation_is_right_continuous() {
        let p = P::new(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![5.0, 7.0, 4.0, 4.0],
            Interpolation::PiecewiseConstantRightContinuous,
        )
        .unwrap();
        assert_eq!(p.value_at(0.0).unwrap(), 5.0);
        assert_eq!(p.value_at(0.999).unwrap(), 5.0);
        assert_eq!(p.value_at(1.0).unwrap(), 7.0);
        assert_eq!(p.left_limit_at(1.0).unwrap(), 5.0);
        assert_eq!(p.value_at(2.5).unwrap(), 4.0);
        assert_eq!(p.value_at(3.0).unwrap(), 4.0);
        assert_eq!(p.left_limit_at(3.0).unwrap(), 4.0);
    }

    #[test]
    fn sup_distance_linear_vs_linear_is_exact() {
        // Zig versus flat: max gap sits at the middle knot.
        let a = P::uniform(0.0, 0.5, vec![0.0, 1.0, 0.0], Interpolation::PiecewiseLinear)
            .unwrap();
        let b = P::constant(0.0, 1.0, 0.25).unwrap();
        assert_eq!(a.sup_distance(&b).unwrap(), 0.75);
        assert_eq!(b.sup_distance(&a).unwrap(), 0.75);
        // Offset grids: the widest gap sits at t = 0.25, a knot only c has
        // (a(0.25) = 0.5 against the dip to -0.75), so the candidate set must
        // include the other path's knots. All values dyadic, hence exact.
        let c = P::uniform(
            0.0,
            0.25,
            vec![0.0, -0.75, 0.0, 0.0, 0.0],
            Interpolation::PiecewiseLinear,
        )
        .unwrap();
        assert_eq!(a.sup_distance(&c).unwrap(), 1.25);
        assert_eq!(c.sup_distance(&a).unwrap(), 1.25);
    }

    #[test]
    fn sup_distance_sees_jump_left_limits() {
        // Step path dropping at t = 1 versus the constant 0: the left limit
        // at the jump carries the extreme value.
        let step = P::new(
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, 0.0],
            Interpolation::PiecewiseConstantRightContinuous,
        )
        .unwrap();
        let flat = P::constant(0.0, 2.0, 0.0).unwrap();
        assert_eq!(step.sup_distance(&flat).unwrap(), 1.0);
    }

    #[test]
    fn sup_distance_rejects_disjoint_domains() {
        let a = P::constant(0.0, 1.0, 0.0).unwrap();
        let b = P::constant(0.0, 2.0, 0.0).unwrap();
        assert!(matches!(
            a.sup_distance(&b),
            Err(PathError::DomainMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let p = P::uniform(0.0, 0.1, vec![0.25, -1.5, 3.0], Interpolation::PiecewiseLinear)
            .unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time,value\n"));
        let back = P::read_csv(&mut buf.as_slice()).unwrap();
        assert_eq!(back.times(), p.times());
        assert_eq!(back.values(), p.values());
    }

    #[test]
    fn uniformity_check() {
        let p = P::uniform(0.0, 0.1, vec![0.0; 11], Interpolation::PiecewiseLinear).unwrap();
        assert!(p.is_uniform(1e-9));
        let q = P::new(
            vec![0.0, 0.1, 0.3],
            vec![0.0, 0.0, 0.0],
            Interpolation::PiecewiseLinear,
        )
        .unwrap();
        assert!(!q.is_uniform(1e-9));
    }

    #[test]
    fn segments_walk_the_knots() {
        let p = P::uniform(0.0, 1.0, vec![0.0, 2.0, 1.0], Interpolation::PiecewiseLinear)
            .unwrap();
        let segs: Vec<_> = p.segments().collect();
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].t0, segs[0].t1, segs[0].x0, segs[0].x1), (0.0, 1.0, 0.0, 2.0));
        assert_eq!((segs[1].x0, segs[1].x1), (2.0, 1.0));
    }
}

//! Extended real values with explicit infinities.
//!
//! Population exponents of empty sets are minus infinity and the action of a
//! path with jumps is plus infinity. Storing IEEE infinities in fields invites
//! `0 * inf = NaN` accidents inside quadrature sums, so infinities live in a
//! dedicated enum with absorbing arithmetic and only finite payloads carry
//! floats.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use crate::scalar::Real;

/// A real number extended with `-inf` and `+inf` sentinels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Extended<S> {
    /// Smaller than every finite value (extinct sets, masked cells).
    NegInf,
    /// An ordinary finite value.
    Finite(S),
    /// Larger than every finite value (non-absolutely-continuous action).
    PosInf,
}

impl<S: Real> Extended<S> {
    /// Wraps a finite scalar; panics on non-finite input to keep the
    /// invariant that infinities are represented structurally.
    pub fn finite(v: S) -> Self {
        assert!(v.is_finite(), "Extended::finite() requires a finite payload, got {v}");
        Extended::Finite(v)
    }

    /// Returns the finite payload, if any.
    pub fn as_finite(self) -> Option<S> {
        match self {
            Extended::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    pub fn is_neg_inf(self) -> bool {
        matches!(self, Extended::NegInf)
    }

    pub fn is_pos_inf(self) -> bool {
        matches!(self, Extended::PosInf)
    }

    /// Larger of two extended values.
    pub fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    /// Smaller of two extended values.
    pub fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    /// Applies `f` to the finite payload, keeping infinities as they are.
    pub fn map<T: Real>(self, f: impl FnOnce(S) -> T) -> Extended<T> {
        match self {
            Extended::NegInf => Extended::NegInf,
            Extended::Finite(v) => Extended::Finite(f(v)),
            Extended::PosInf => Extended::PosInf,
        }
    }
}

fn rank<S>(v: &Extended<S>) -> i8 {
    match v {
        Extended::NegInf => -1,
        Extended::Finite(_) => 0,
        Extended::PosInf => 1,
    }
}

impl<S: Real> PartialOrd for Extended<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Extended::Finite(a), Extended::Finite(b)) => a.partial_cmp(b),
            _ => rank(self).partial_cmp(&rank(other)),
        }
    }
}

impl<S: Real> Add for Extended<S> {
    type Output = Extended<S>;

    /// Absorbing addition. Adding opposite infinities is a logic error in
    /// every caller of this crate, so it panics rather than inventing a value.
    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::finite(a + b),
            (Extended::NegInf, Extended::PosInf) | (Extended::PosInf, Extended::NegInf) => {
                panic!("Extended addition of opposite infinities")
            }
            (Extended::PosInf, _) | (_, Extended::PosInf) => Extended::PosInf,
            (Extended::NegInf, _) | (_, Extended::NegInf) => Extended::NegInf,
        }
    }
}

impl<S: Real> Add<S> for Extended<S> {
    type Output = Extended<S>;

    fn add(self, rhs: S) -> Self {
        self + Extended::finite(rhs)
    }
}

impl<S: Real> Sub for Extended<S> {
    type Output = Extended<S>;

    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<S: Real> Neg for Extended<S> {
    type Output = Extended<S>;

    fn neg(self) -> Self {
        match self {
            Extended::NegInf => Extended::PosInf,
            Extended::Finite(v) => Extended::Finite(-v),
            Extended::PosInf => Extended::NegInf,
        }
    }
}

impl<S: Real> fmt::Display for Extended<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extended::NegInf => write!(f, "-inf"),
            Extended::Finite(v) => write!(f, "{v}"),
            Extended::PosInf => write!(f, "inf"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type E = Extended<f64>;

    #[test]
    fn ordering_ranks_infinities_around_finites() {
        assert!(E::NegInf < E::finite(-1e300));
        assert!(E::finite(1e300) < E::PosInf);
        assert!(E::finite(1.0) < E::finite(2.0));
        assert!(E::NegInf < E::PosInf);
    }

    #[test]
    fn addition_absorbs() {
        assert_eq!(E::PosInf + E::finite(-5.0), E::PosInf);
        assert_eq!(E::NegInf + E::finite(5.0), E::NegInf);
        assert_eq!(E::finite(2.0) + E::finite(3.0), E::finite(5.0));
        assert_eq!(E::finite(2.0) - E::PosInf, E::NegInf);
    }

    #[test]
    #[should_panic(expected = "opposite infinities")]
    fn adding_opposite_infinities_panics() {
        let _ = E::PosInf + E::NegInf;
    }

    #[test]
    fn max_and_min_respect_sentinels() {
        assert_eq!(E::NegInf.max(E::finite(0.0)), E::finite(0.0));
        assert_eq!(E::PosInf.min(E::finite(0.0)), E::finite(0.0));
    }

    #[test]
    fn display_matches_report_grammar() {
        assert_eq!(E::NegInf.to_string(), "-inf");
        assert_eq!(E::finite(1.5).to_string(), "1.5");
        assert_eq!(E::PosInf.to_string(), "inf");
    }
}

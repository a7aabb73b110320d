//! Prescribed constraint paths `t -> ell(t)`.

use serde::{Deserialize, Serialize};

use crate::roots::bisect;
use crate::scalar::Real;

/// A prescribed moment path with its time derivative.
pub trait ConstraintPath<T: Real>: Send + Sync {
    fn ell(&self, t: T) -> T;
    fn ell_dot(&self, t: T) -> T;

    /// Time in `[t0, t1]` at which `ell(t) = target`, assuming `ell` is monotone there.
    fn time_at(&self, target: T, t0: T, t1: T) -> Option<T> {
        bisect(|t| self.ell(t) - target, t0, t1, T::epsilon() * (t0.abs() + t1.abs() + T::one()))
    }
}

/// `ell(t) = c0 + c1 * t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPath<T> {
    pub c0: T,
    pub c1: T,
}

impl<T> LinearPath<T> {
    pub fn new(c0: T, c1: T) -> Self {
        Self { c0, c1 }
    }
}

impl<T: Real> ConstraintPath<T> for LinearPath<T> {
    fn ell(&self, t: T) -> T {
        self.c0 + self.c1 * t
    }
    fn ell_dot(&self, _t: T) -> T {
        self.c1
    }
    fn time_at(&self, target: T, t0: T, t1: T) -> Option<T> {
        if self.c1 == T::zero() {
            return None;
        }
        let t = (target - self.c0) / self.c1;
        (t >= t0 && t <= t1).then_some(t)
    }
}

/// Piecewise-linear interpolation through `(t_k, ell_k)` knots, constant
/// outside the knot range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearPath<T> {
    pub knots: Vec<(T, T)>,
}

impl<T: Real> PiecewiseLinearPath<T> {
    /// Knots must have strictly increasing times.
    pub fn new(knots: Vec<(T, T)>) -> Option<Self> {
        if knots.is_empty() || knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return None;
        }
        Some(Self { knots })
    }

    fn segment(&self, t: T) -> Option<usize> {
        let n = self.knots.len();
        if n < 2 || t < self.knots[0].0 || t >= self.knots[n - 1].0 {
            return None;
        }
        Some(self.knots.partition_point(|k| k.0 <= t) - 1)
    }
}

impl<T: Real> ConstraintPath<T> for PiecewiseLinearPath<T> {
    fn ell(&self, t: T) -> T {
        let n = self.knots.len();
        if t <= self.knots[0].0 {
            return self.knots[0].1;
        }
        if t >= self.knots[n - 1].0 {
            return self.knots[n - 1].1;
        }
        let i = self.segment(t).unwrap_or(n - 2);
        let (t0, l0) = self.knots[i];
        let (t1, l1) = self.knots[i + 1];
        l0 + (l1 - l0) * (t - t0) / (t1 - t0)
    }
    fn ell_dot(&self, t: T) -> T {
        match self.segment(t) {
            Some(i) => {
                let (t0, l0) = self.knots[i];
                let (t1, l1) = self.knots[i + 1];
                (l1 - l0) / (t1 - t0)
            }
            None => T::zero(),
        }
    }
}

/// Path given by closures, mainly for tests and synthetic drivers.
pub struct FnPath<F, G> {
    pub ell: F,
    pub ell_dot: G,
}

impl<T: Real, F, G> ConstraintPath<T> for FnPath<F, G>
where
    F: Fn(T) -> T + Send + Sync,
    G: Fn(T) -> T + Send + Sync,
{
    fn ell(&self, t: T) -> T {
        (self.ell)(t)
    }
    fn ell_dot(&self, t: T) -> T {
        (self.ell_dot)(t)
    }
}

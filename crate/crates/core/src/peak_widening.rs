//! Width law of an unstable peak.
//!
//! With `f(t) = H''(x1(t))` and `phi(t) = int_{t1}^t f`, the squared width is
//! `w^2(t) = (1/tau) exp(-(2 phi(t) + 2a)/tau) int_{t0}^t exp(2 phi(s)/tau) ds`
//! and the peak splits when `phi(t2) + a = 0`.

use serde::Serialize;
use thiserror::Error;

use crate::ode::hermite;
use crate::potential::DoubleWell;
use crate::quad::{adaptive, gl8, log_sum_exp, GL8_W, GL8_X};
use crate::roots::bisect;
use crate::scalar::{c, Real};
use crate::two_peaks::TpmTrajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WidthError {
    #[error("position {0} is not in the spinodal region")]
    NotSpinodal(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WidthState<T> {
    pub t: T,
    pub phi: T,
    pub w2: T,
}

/// Cubic Hermite interpolant through `(t_k, x_k, x'_k)`.
#[derive(Clone, Debug)]
pub struct DenseTrajectory<T> {
    pub t: Vec<T>,
    pub x: Vec<T>,
    pub dx: Vec<T>,
}

impl<T: Real> DenseTrajectory<T> {
    /// `t` must be strictly increasing and all vectors of equal length.
    pub fn new(t: Vec<T>, x: Vec<T>, dx: Vec<T>) -> Option<Self> {
        let ok = !t.is_empty() && t.len() == x.len() && t.len() == dx.len() && t.windows(2).all(|w| w[1] > w[0]);
        ok.then_some(Self { t, x, dx })
    }

    /// First-peak path of a two-peak run; `x1' = (sigma - H'(x1)) / tau`.
    pub fn from_tpm(dw: &DoubleWell<T>, traj: &TpmTrajectory<T>) -> Option<Self> {
        let mut t = Vec::with_capacity(traj.samples.len());
        let mut x = Vec::with_capacity(traj.samples.len());
        let mut dx = Vec::with_capacity(traj.samples.len());
        for s in &traj.samples {
            if t.last().is_some_and(|&l| s.t <= l) {
                continue;
            }
            t.push(s.t);
            x.push(s.x1);
            dx.push((s.sigma - dw.d1(s.x1)) / traj.tau);
        }
        Self::new(t, x, dx)
    }

    /// Value at `t`, clamped to the sampled range.
    pub fn eval(&self, t: T) -> T {
        let n = self.t.len();
        if n == 1 || t <= self.t[0] {
            return self.x[0];
        }
        if t >= self.t[n - 1] {
            return self.x[n - 1];
        }
        let i = self.t.partition_point(|&s| s <= t) - 1;
        hermite(self.t[i], self.t[i + 1], self.x[i], self.x[i + 1], self.dx[i], self.dx[i + 1], t)
    }

    pub fn t_range(&self) -> (T, T) {
        (self.t[0], self.t[self.t.len() - 1])
    }
}

/// `f(t) = H''(x1(t))` along a position path.
pub fn curvature_along<'a, T: Real>(dw: &'a DoubleWell<T>, x1: impl Fn(T) -> T + 'a) -> impl Fn(T) -> T + 'a {
    move |t| dw.d2(x1(t))
}

fn quad_tol<T: Real>() -> T {
    c::<T>(1e-13).max(T::epsilon() * c(16.0))
}

/// `phi(t) = int_{t1}^t f(s) ds`.
pub fn phi_of_t<T: Real>(f: impl Fn(T) -> T, t1: T, t: T) -> T {
    adaptive(&f, t1, t, quad_tol())
}

/// Breakpoints of `[t0, t]` with panels no wider than `tau / 16`, and with
/// `t1` as a breakpoint when it lies inside.
fn panel_edges<T: Real>(t0: T, t1: T, t: T, tau: T) -> Vec<T> {
    let mut pieces = vec![t0];
    if t1 > t0 && t1 < t {
        pieces.push(t1);
    }
    pieces.push(t);
    let mut edges = vec![t0];
    for w in pieces.windows(2) {
        let len = w[1] - w[0];
        let n = (len * c(16.0) / tau).ceil().to_usize().unwrap_or(1).clamp(8, 400_000);
        let h = len / T::count(n);
        for k in 1..n {
            edges.push(w[0] + h * T::count(k));
        }
        edges.push(w[1]);
    }
    edges
}

/// Log of the squared width, accumulated in the log domain.
pub fn log_width_squared<T: Real>(f: impl Fn(T) -> T, tau: T, a: T, t0: T, t1: T, t: T) -> T {
    if t <= t0 {
        return T::neg_infinity();
    }
    let mut f = f;
    let edges = panel_edges(t0, t1, t, tau);
    // Phi(s) = int_{t0}^s f, so phi(s) = Phi(s) - Phi(t1)
    let phi_t1 = adaptive(&f, t0, t1, quad_tol());
    let mut phi_edge = T::zero();
    let mut terms = Vec::with_capacity(8 * edges.len());
    let two: T = c(2.0);
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let half = (hi - lo) * c(0.5);
        let mid = lo + half;
        for k in 0..4 {
            let dx = half * c(GL8_X[k]);
            for node in [mid - dx, mid + dx] {
                let phi = phi_edge + gl8(&mut f, lo, node) - phi_t1;
                terms.push((c::<T>(GL8_W[k]) * half).ln() + two * phi / tau);
            }
        }
        phi_edge = phi_edge + gl8(&mut f, lo, hi);
    }
    let phi_t = phi_edge - phi_t1;
    -tau.ln() - (two * phi_t + two * a) / tau + log_sum_exp(&terms)
}

/// Squared width and `phi` at `t`.
pub fn width_squared<T: Real>(f: impl Fn(T) -> T, tau: T, a: T, t0: T, t1: T, t: T) -> WidthState<T> {
    let phi = phi_of_t(&f, t1, t);
    WidthState { t, phi, w2: log_width_squared(&f, tau, a, t0, t1, t).exp() }
}

/// Direct evaluation with plain exponentials; overflows once `|phi|/tau` is large.
pub fn width_squared_direct<T: Real>(f: impl Fn(T) -> T, tau: T, a: T, t0: T, t1: T, t: T) -> T {
    let two: T = c(2.0);
    let tol = quad_tol();
    let inner = adaptive(|s| (two * phi_of_t(&f, t1, s) / tau).exp(), t0, t, tol);
    (-(two * phi_of_t(&f, t1, t) + two * a) / tau).exp() * inner / tau
}

/// First root of `phi(t) + a` on `(t1, t3)`, located to `1e-10` in `t`.
pub fn splitting_time<T: Real>(f: impl Fn(T) -> T, a: T, t1: T, t3: T) -> Option<T> {
    if t3 <= t1 {
        return None;
    }
    let scan = 512;
    let h = (t3 - t1) / T::count(scan);
    let tol = quad_tol();
    let mut phi = T::zero();
    let mut lo = t1;
    for k in 1..=scan {
        let hi = if k == scan { t3 } else { t1 + h * T::count(k) };
        let next = phi + adaptive(&f, lo, hi, tol);
        if next + a <= T::zero() {
            let base = phi;
            let start = lo;
            let xtol = c::<T>(1e-10).max(T::epsilon() * t3.abs() * c(4.0));
            return bisect(|s| base + adaptive(&f, start, s, tol) + a, start, hi, xtol);
        }
        phi = next;
        lo = hi;
    }
    None
}

/// Growth rate `beta = -H''(x)` of the width near the splitting time.
pub fn beta_at<T: Real>(dw: &DoubleWell<T>, x1_t2: T) -> Result<T, WidthError> {
    let xs = dw.x_star();
    if x1_t2.abs() > xs * (T::one() + T::root_tol()) || !x1_t2.is_finite() {
        return Err(WidthError::NotSpinodal(x1_t2.as_f64()));
    }
    Ok((-dw.d2(x1_t2)).max(T::zero()))
}

/// `C = max |H''|` over the spinodal interval.
pub fn spinodal_curvature_bound<T: Real>(dw: &DoubleWell<T>) -> T {
    let xs = dw.x_star();
    let n = 2000;
    let at = |k: usize| -xs + xs * c::<T>(2.0) * T::count(k) / T::count(n);
    let (mut best_k, mut best) = (0, T::zero());
    for k in 0..=n {
        let v = dw.d2(at(k)).abs();
        if v > best {
            best = v;
            best_k = k;
        }
    }
    // golden-section refinement around the best sample
    let (mut lo, mut hi) = (at(best_k.saturating_sub(1)), at((best_k + 1).min(n)));
    let g: T = c(0.618_033_988_749_894_8);
    for _ in 0..80 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if dw.d2(x1).abs() >= dw.d2(x2).abs() {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    best.max(dw.d2((lo + hi) * c(0.5)).abs())
}

/// Lower bound `a / C` on the time between a switching and the next splitting.
pub fn min_splitting_interval<T: Real>(dw: &DoubleWell<T>, a: T) -> T {
    a / spinodal_curvature_bound(dw)
}

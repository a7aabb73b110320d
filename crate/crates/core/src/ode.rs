//! Adaptive Dormand-Prince 5(4) integrator with cubic Hermite dense output.

use crate::scalar::{c, Real};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions<T> {
    pub atol: T,
    pub rtol: T,
    pub h_init: T,
    pub h_min: T,
    pub h_max: T,
    pub max_steps: usize,
}

impl<T: Real> Default for OdeOptions<T> {
    fn default() -> Self {
        Self { atol: c(1e-10), rtol: c(1e-8), h_init: c(1e-4), h_min: c(1e-14), h_max: T::infinity(), max_steps: 5_000_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OdeStop {
    Finished,
    /// Step size fell below `h_min`.
    StepUnderflow,
    /// The halting predicate returned true after an accepted step.
    Halted,
    MaxSteps,
    NonFinite,
}

/// Accepted steps `(t, y, y')` of an integration.
#[derive(Clone, Debug)]
pub struct OdeSolution<T> {
    pub t: Vec<T>,
    pub y: Vec<Vec<T>>,
    pub dy: Vec<Vec<T>>,
    pub stop: OdeStop,
}

impl<T: Real> OdeSolution<T> {
    pub fn last(&self) -> (&T, &[T]) {
        let n = self.t.len() - 1;
        (&self.t[n], &self.y[n])
    }

    /// Cubic Hermite interpolation of component `k` at time `t` (clamped to the
    /// integrated range).
    pub fn interp(&self, k: usize, t: T) -> T {
        let n = self.t.len();
        if n == 1 || t <= self.t[0] {
            return self.y[0][k];
        }
        if t >= self.t[n - 1] {
            return self.y[n - 1][k];
        }
        let i = self.t.partition_point(|&s| s <= t) - 1;
        hermite(self.t[i], self.t[i + 1], self.y[i][k], self.y[i + 1][k], self.dy[i][k], self.dy[i + 1][k], t)
    }
}

/// Cubic Hermite interpolant on `[t0, t1]`.
pub fn hermite<T: Real>(t0: T, t1: T, y0: T, y1: T, d0: T, d1: T, t: T) -> T {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let two: T = c(2.0);
    let three: T = c(3.0);
    let h00 = two * s3 - three * s2 + T::one();
    let h10 = s3 - two * s2 + s;
    let h01 = three * s2 - two * s3;
    let h11 = s3 - s2;
    h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// error coefficients b - b*
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

/// Integrates `y' = f(t, y)` from `t0` to `t_end`.
///
/// `halt` is called after every accepted step; returning `true` stops the
/// integration with [`OdeStop::Halted`].
pub fn dopri5<T: Real>(
    mut f: impl FnMut(T, &[T], &mut [T]),
    t0: T,
    y0: &[T],
    t_end: T,
    opts: &OdeOptions<T>,
    mut halt: impl FnMut(T, &[T]) -> bool,
) -> OdeSolution<T> {
    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![T::zero(); n];
    f(t, &y, &mut k1);
    let mut sol = OdeSolution { t: vec![t], y: vec![y.clone()], dy: vec![k1.clone()], stop: OdeStop::Finished };
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut k5 = vec![T::zero(); n];
    let mut k6 = vec![T::zero(); n];
    let mut k7 = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    let mut ynew = vec![T::zero(); n];
    let mut h = opts.h_init.min(opts.h_max).min(t_end - t0);
    let mut steps = 0;
    while t < t_end {
        if steps >= opts.max_steps {
            sol.stop = OdeStop::MaxSteps;
            return sol;
        }
        steps += 1;
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        macro_rules! stage {
            ($out:ident, $tc:expr, $( ($a:expr, $k:ident) ),+) => {{
                for i in 0..n {
                    tmp[i] = y[i] $( + h * c::<T>($a) * $k[i] )+;
                }
                f(t + h * c::<T>($tc), &tmp, &mut $out);
            }};
        }
        stage!(k2, C2, (A21, k1));
        stage!(k3, C3, (A31, k1), (A32, k2));
        stage!(k4, C4, (A41, k1), (A42, k2), (A43, k3));
        stage!(k5, C5, (A51, k1), (A52, k2), (A53, k3), (A54, k4));
        stage!(k6, 1.0, (A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5));
        for i in 0..n {
            ynew[i] = y[i] + h * (c::<T>(B1) * k1[i] + c::<T>(B3) * k3[i] + c::<T>(B4) * k4[i] + c::<T>(B5) * k5[i] + c::<T>(B6) * k6[i]);
        }
        f(t + h, &ynew, &mut k7);
        let mut err = T::zero();
        for i in 0..n {
            let e = h
                * (c::<T>(E1) * k1[i]
                    + c::<T>(E3) * k3[i]
                    + c::<T>(E4) * k4[i]
                    + c::<T>(E5) * k5[i]
                    + c::<T>(E6) * k6[i]
                    + c::<T>(E7) * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err = err + (e / sc) * (e / sc);
        }
        err = (err / T::count(n)).sqrt();
        if !err.is_finite() || ynew.iter().any(|v| !v.is_finite()) {
            h = h * c(0.25);
            if h < opts.h_min {
                sol.stop = OdeStop::NonFinite;
                return sol;
            }
            continue;
        }
        if err <= T::one() {
            t = if last { t_end } else { t + h };
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            sol.t.push(t);
            sol.y.push(y.clone());
            sol.dy.push(k1.clone());
            if halt(t, &y) {
                sol.stop = OdeStop::Halted;
                return sol;
            }
        }
        let fac = if err == T::zero() { c(5.0) } else { (c::<T>(0.9) * err.powf(c(-0.2))).min(c(5.0)).max(c(0.2)) };
        h = (h * fac).min(opts.h_max);
        if h < opts.h_min && t < t_end {
            sol.stop = OdeStop::StepUnderflow;
            return sol;
        }
    }
    sol
}

//! Two-peak model: two point masses `m1`, `m2 = 1 - m1` at positions `x1`, `x2`
//! with `tau x_i' = sigma - H'(x_i)` and `m1 x1 + m2 x2 = ell(t)`, and its
//! quasi-stationary limit `H'(x1) = H'(x2) = sigma`.

use serde::Serialize;
use thiserror::Error;

use crate::ode::{dopri5, OdeOptions, OdeStop};
use crate::path::ConstraintPath;
use crate::potential::{Branch, DoubleWell, PotentialError};
use crate::roots::bisect;
use crate::scalar::{c, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TpmError {
    #[error("mass m1 = {0} outside [0, 1]")]
    InvalidMass(f64),
    #[error("no quasi-stationary state with ell = {ell} on branch pair {pair:?}")]
    NoSolution { ell: f64, pair: BranchPair },
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

/// Branch pair of a quasi-stationary state `(x1, x2) = (X_a(sigma), X_b(sigma))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BranchPair {
    /// Both peaks stable: `(X_-, X_+)`.
    MinusPlus,
    /// First peak on the spinodal branch: `(X_0, X_+)`.
    ZeroPlus,
}

impl BranchPair {
    pub fn branches(self) -> (Branch, Branch) {
        match self {
            BranchPair::MinusPlus => (Branch::Minus, Branch::Plus),
            BranchPair::ZeroPlus => (Branch::Zero, Branch::Plus),
        }
    }
}

/// Quasi-stationary state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QsPoint<T> {
    pub x1: T,
    pub x2: T,
    pub sigma: T,
}

fn check_mass<T: Real>(m1: T) -> Result<(), TpmError> {
    if m1 >= T::zero() && m1 <= T::one() {
        Ok(())
    } else {
        Err(TpmError::InvalidMass(m1.as_f64()))
    }
}

/// `Z = m1 H''(x2) + m2 H''(x1)`; the quasi-stationary curve is tangent to
/// the constraint line where `Z = 0`.
#[inline]
pub fn z_function<T: Real>(dw: &DoubleWell<T>, m1: T, x1: T, x2: T) -> T {
    m1 * dw.d2(x2) + (T::one() - m1) * dw.d2(x1)
}

/// Linear decay rate `m1 H''(x2) + m2 H''(x1)` of perturbations about a
/// quasi-stationary state (in units of `1/tau`).
pub fn linear_decay_rate<T: Real>(dw: &DoubleWell<T>, m1: T, x1: T, x2: T) -> T {
    z_function(dw, m1, x1, x2)
}

/// Constraint value `ell` at which the `(X_-, X_+)` and `(X_0, X_+)` pairs meet,
/// i.e. at `(x1, x2) = (-x_*, x_**)`.
pub fn corner_ell<T: Real>(dw: &DoubleWell<T>, m1: T) -> T {
    -m1 * dw.x_star() + (T::one() - m1) * dw.x_star_star()
}

/// Tension of the first tangency of the `(X_0, X_+)` curve with the
/// constraint line, scanning from `sigma_*` downward. `None` means the pair
/// reaches `sigma = -sigma_*` without tangency (continuous merging).
pub fn tangency<T: Real>(dw: &DoubleWell<T>, m1: T) -> Result<Option<T>, TpmError> {
    check_mass(m1)?;
    let s = dw.sigma_star();
    let z = |sigma: T| -> T {
        let x0 = dw.branch_inverse(Branch::Zero, sigma).unwrap_or(T::nan());
        let xp = dw.branch_inverse(Branch::Plus, sigma).unwrap_or(T::nan());
        z_function(dw, m1, x0, xp)
    };
    let n = 4000;
    let mut prev_sigma = s;
    let mut prev = z(s);
    for i in 1..n {
        let sigma = s - (s + s) * T::count(i) / T::count(n);
        let v = z(sigma);
        if v <= T::zero() && prev > T::zero() {
            let r = bisect(z, sigma, prev_sigma, T::epsilon() * c(4.0));
            return Ok(r);
        }
        prev = v;
        prev_sigma = sigma;
    }
    Ok(None)
}

/// Solves the quasi-stationary problem `H'(x1) = H'(x2) = sigma`,
/// `m1 x1 + m2 x2 = ell` on the given branch pair.
///
/// On `(X_0, X_+)` only the part between the corner and the first tangency
/// (where the solution is unique) is searched.
pub fn qs_solve<T: Real>(dw: &DoubleWell<T>, m1: T, ell: T, pair: BranchPair) -> Result<QsPoint<T>, TpmError> {
    check_mass(m1)?;
    let m2 = T::one() - m1;
    let (b1, b2) = pair.branches();
    let no = || TpmError::NoSolution { ell: ell.as_f64(), pair };
    if m1 == T::one() || m2 == T::one() {
        // a single peak sitting at ell
        let (b, other) = if m1 == T::one() { (b1, b2) } else { (b2, b1) };
        let sigma = dw.d1(ell);
        if !dw.in_domain(b, sigma) || (dw.branch_inverse(b, sigma)? - ell).abs() > c::<T>(1e-9) * (T::one() + ell.abs()) {
            return Err(no());
        }
        let o = dw.branch_inverse(other, sigma).unwrap_or(ell);
        let (x1, x2) = if m1 == T::one() { (ell, o) } else { (o, ell) };
        return Ok(QsPoint { x1, x2, sigma });
    }
    let s = dw.sigma_star();
    let g = |sigma: T| -> T {
        m1 * dw.branch_inverse(b1, sigma).unwrap_or(T::nan()) + m2 * dw.branch_inverse(b2, sigma).unwrap_or(T::nan()) - ell
    };
    let (lo, hi) = match pair {
        BranchPair::MinusPlus => (-s, s),
        BranchPair::ZeroPlus => (tangency(dw, m1)?.unwrap_or(-s), s),
    };
    let sigma = bisect(g, lo, hi, T::epsilon() * c(2.0)).ok_or_else(no)?;
    Ok(QsPoint { x1: dw.branch_inverse(b1, sigma)?, x2: dw.branch_inverse(b2, sigma)?, sigma })
}

/// Right-hand side of the two-peak ODE: returns `(x1', x2', sigma)`.
pub fn tpm_rhs<T: Real>(dw: &DoubleWell<T>, m1: T, tau: T, ell_dot: T, x1: T, x2: T) -> (T, T, T) {
    let m2 = T::one() - m1;
    let (g1, g2) = (dw.d1(x1), dw.d1(x2));
    let sigma = m1 * g1 + m2 * g2 + tau * ell_dot;
    ((sigma - g1) / tau, (sigma - g2) / tau, sigma)
}

/// One recorded sample of a two-peak trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TpmSample<T> {
    pub t: T,
    pub x1: T,
    pub x2: T,
    pub sigma: T,
    /// `m1 H(x1) + m2 H(x2)`.
    pub energy: T,
    /// `tau (m1 x1'^2 + m2 x2'^2)`.
    pub dissipation: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TpmStop {
    Finished,
    /// The state crossed `Z = 0` with `x1` in the spinodal region.
    MergingOnset,
    /// The integrator could no longer make progress.
    StepUnderflow,
    Failed,
}

#[derive(Clone, Debug)]
pub struct TpmTrajectory<T> {
    pub m1: T,
    pub tau: T,
    pub samples: Vec<TpmSample<T>>,
    pub stop: TpmStop,
    /// Time integral of `|E' + D - sigma ell'|`, accumulated per step with
    /// Simpson's rule on the dense output.
    pub balance_audit: T,
}

#[derive(Clone, Copy, Debug)]
pub struct TpmOptions<T> {
    pub atol: T,
    pub rtol: T,
    /// Halt when the state becomes linearly unstable (`Z <= 0` with `x1` spinodal).
    pub stop_at_merging: bool,
}

impl<T: Real> Default for TpmOptions<T> {
    fn default() -> Self {
        Self { atol: c(1e-10), rtol: c(1e-8), stop_at_merging: false }
    }
}

/// Integrates the two-peak model from `(x1, x2)` at `t0` to `t_end`.
pub fn tpm_integrate<T: Real>(
    dw: &DoubleWell<T>,
    m1: T,
    tau: T,
    init: (T, T),
    path: &dyn ConstraintPath<T>,
    t0: T,
    t_end: T,
    opts: &TpmOptions<T>,
) -> Result<TpmTrajectory<T>, TpmError> {
    check_mass(m1)?;
    let m2 = T::one() - m1;
    let ode = OdeOptions { atol: opts.atol, rtol: opts.rtol, h_init: tau * c(1e-2), h_min: tau * c(1e-12), ..OdeOptions::default() };
    let rhs = |t: T, y: &[T], d: &mut [T]| {
        let (a, b, _) = tpm_rhs(dw, m1, tau, path.ell_dot(t), y[0], y[1]);
        d[0] = a;
        d[1] = b;
    };
    let xs = dw.x_star();
    let stop_merge = opts.stop_at_merging;
    let sol = dopri5(rhs, t0, &[init.0, init.1], t_end, &ode, |_, y| {
        stop_merge && y[0].abs() < xs && z_function(dw, m1, y[0], y[1]) <= T::zero()
    });
    let sample = |t: T, x1: T, x2: T| {
        let (d1, d2, sigma) = tpm_rhs(dw, m1, tau, path.ell_dot(t), x1, x2);
        TpmSample { t, x1, x2, sigma, energy: m1 * dw.h(x1) + m2 * dw.h(x2), dissipation: tau * (m1 * d1 * d1 + m2 * d2 * d2) }
    };
    let samples: Vec<TpmSample<T>> = sol.t.iter().zip(&sol.y).map(|(&t, y)| sample(t, y[0], y[1])).collect();
    let mut audit = T::zero();
    for k in 0..samples.len().saturating_sub(1) {
        let (a, b) = (&samples[k], &samples[k + 1]);
        let tm = (a.t + b.t) / c(2.0);
        let mid = sample(tm, sol.interp(0, tm), sol.interp(1, tm));
        let integrand = |s: &TpmSample<T>| s.dissipation - s.sigma * path.ell_dot(s.t);
        let six: T = c(6.0);
        let four: T = c(4.0);
        let quad = (b.t - a.t) / six * (integrand(a) + four * integrand(&mid) + integrand(b));
        audit = audit + (b.energy - a.energy + quad).abs();
    }
    let stop = match sol.stop {
        OdeStop::Finished => TpmStop::Finished,
        OdeStop::Halted => TpmStop::MergingOnset,
        OdeStop::StepUnderflow => TpmStop::StepUnderflow,
        _ => TpmStop::Failed,
    };
    Ok(TpmTrajectory { m1, tau, samples, stop, balance_audit: audit })
}

/// Quasi-stationary state along a monotone increasing path, switching from
/// `(X_-, X_+)` to `(X_0, X_+)` at the corner.
pub fn qs_along<T: Real>(dw: &DoubleWell<T>, m1: T, ell: T) -> Result<QsPoint<T>, TpmError> {
    let pair = if ell <= corner_ell(dw, m1) { BranchPair::MinusPlus } else { BranchPair::ZeroPlus };
    qs_solve(dw, m1, ell, pair)
}

//! Even double-well potentials, their landmarks and branch inverses of `H'`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roots::safeguarded_newton;
use crate::scalar::{c, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("potential is not a double well: {0}")]
    NotDoubleWell(String),
    #[error("sigma = {sigma} outside the domain of branch {branch:?}")]
    OutOfDomain { branch: Branch, sigma: f64 },
    #[error("branch inverse did not converge for sigma = {0}")]
    NoConvergence(f64),
    #[error("unknown potential {0:?}")]
    Unknown(String),
}

/// `H` together with its first three derivatives.
pub trait Potential<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn h(&self, x: T) -> T;
    fn d1(&self, x: T) -> T;
    fn d2(&self, x: T) -> T;
    fn d3(&self, x: T) -> T;
}

/// `H(x) = (x^2 - 1)^2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Quartic;

impl<T: Real> Potential<T> for Quartic {
    fn name(&self) -> &str {
        "quartic"
    }
    fn h(&self, x: T) -> T {
        let q = x * x - T::one();
        q * q
    }
    fn d1(&self, x: T) -> T {
        let four: T = c(4.0);
        four * x * (x * x - T::one())
    }
    fn d2(&self, x: T) -> T {
        c::<T>(12.0) * x * x - c(4.0)
    }
    fn d3(&self, x: T) -> T {
        c::<T>(24.0) * x
    }
}

/// Piecewise-smooth model with `H'(x) = x - 2 arctan(x)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ArctanModel;

impl<T: Real> Potential<T> for ArctanModel {
    fn name(&self) -> &str {
        "arctan"
    }
    fn h(&self, x: T) -> T {
        let two: T = c(2.0);
        x * x / two - two * x * x.atan() + (x * x).ln_1p()
    }
    fn d1(&self, x: T) -> T {
        x - c::<T>(2.0) * x.atan()
    }
    fn d2(&self, x: T) -> T {
        T::one() - c::<T>(2.0) / (T::one() + x * x)
    }
    fn d3(&self, x: T) -> T {
        let q = T::one() + x * x;
        c::<T>(4.0) * x / (q * q)
    }
}

/// Built-in potentials selectable by name.
pub fn builtin<T: Real>(name: &str) -> Result<Arc<dyn Potential<T>>, PotentialError> {
    match name {
        "quartic" => Ok(Arc::new(Quartic)),
        "arctan" => Ok(Arc::new(ArctanModel)),
        other => Err(PotentialError::Unknown(other.to_string())),
    }
}

/// The three monotone branches of `H'`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    /// Left stable branch, `x <= -x_*`.
    Minus,
    /// Spinodal branch, `|x| <= x_*`, decreasing in sigma.
    Zero,
    /// Right stable branch, `x >= x_*`.
    Plus,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Minus => "-",
            Branch::Zero => "0",
            Branch::Plus => "+",
        })
    }
}

/// Characteristic points and energies of a double well.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmarks<T> {
    /// Spinodal point: `H''(x_*) = 0`, `x_* > 0`.
    pub x_star: T,
    /// `-H'(x_*)`.
    pub sigma_star: T,
    /// `H'(x_**) = sigma_*` with `x_** > x_*`.
    pub x_star_star: T,
    /// `H(0) - min H`.
    pub h_crit: T,
    /// Barrier height at the spinodal tension.
    pub h_star: T,
    /// `max |H''|` over the spinodal interval.
    pub c_spinodal: T,
}

/// A potential together with its precomputed landmarks.
#[derive(Clone)]
pub struct DoubleWell<T: Real> {
    pot: Arc<dyn Potential<T>>,
    lm: Landmarks<T>,
}

impl<T: Real> fmt::Debug for DoubleWell<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DoubleWell").field("name", &self.pot.name()).field("landmarks", &self.lm).finish()
    }
}

impl<T: Real> DoubleWell<T> {
    pub fn new(pot: Arc<dyn Potential<T>>) -> Result<Self, PotentialError> {
        let lm = landmarks(pot.as_ref())?;
        Ok(Self { pot, lm })
    }

    pub fn quartic() -> Self {
        Self::new(Arc::new(Quartic)).expect("quartic is a double well")
    }

    pub fn arctan() -> Self {
        Self::new(Arc::new(ArctanModel)).expect("arctan model is a double well")
    }

    pub fn by_name(name: &str) -> Result<Self, PotentialError> {
        Self::new(builtin(name)?)
    }

    pub fn name(&self) -> &str {
        self.pot.name()
    }
    pub fn potential(&self) -> &dyn Potential<T> {
        self.pot.as_ref()
    }
    pub fn landmarks(&self) -> &Landmarks<T> {
        &self.lm
    }
    pub fn x_star(&self) -> T {
        self.lm.x_star
    }
    pub fn sigma_star(&self) -> T {
        self.lm.sigma_star
    }
    pub fn x_star_star(&self) -> T {
        self.lm.x_star_star
    }

    #[inline]
    pub fn h(&self, x: T) -> T {
        self.pot.h(x)
    }
    #[inline]
    pub fn d1(&self, x: T) -> T {
        self.pot.d1(x)
    }
    #[inline]
    pub fn d2(&self, x: T) -> T {
        self.pot.d2(x)
    }
    #[inline]
    pub fn d3(&self, x: T) -> T {
        self.pot.d3(x)
    }

    /// Tilted energy `H(x) - sigma x`.
    #[inline]
    pub fn h_sigma(&self, sigma: T, x: T) -> T {
        self.pot.h(x) - sigma * x
    }

    /// Whether `sigma` lies in the closed domain of `branch`.
    pub fn in_domain(&self, branch: Branch, sigma: T) -> bool {
        let s = self.lm.sigma_star;
        match branch {
            Branch::Minus => sigma <= s,
            Branch::Zero => sigma.abs() <= s,
            Branch::Plus => sigma >= -s,
        }
    }

    /// Domain of `branch` as `(lo, hi)`; infinite ends are `+-inf`.
    pub fn domain(&self, branch: Branch) -> (T, T) {
        let s = self.lm.sigma_star;
        match branch {
            Branch::Minus => (T::neg_infinity(), s),
            Branch::Zero => (-s, s),
            Branch::Plus => (-s, T::infinity()),
        }
    }

    /// Solves `H'(x) = sigma` on the given branch.
    ///
    /// Values of `sigma` within a few ulps outside the domain are clamped to
    /// the branch endpoint.
    pub fn branch_inverse(&self, branch: Branch, sigma: T) -> Result<T, PotentialError> {
        let lm = &self.lm;
        let slack = T::epsilon() * c(16.0) * lm.sigma_star;
        let oob = || PotentialError::OutOfDomain { branch, sigma: sigma.as_f64() };
        if !sigma.is_finite() {
            return Err(oob());
        }
        let (lo, hi) = match branch {
            Branch::Minus => {
                if sigma > lm.sigma_star + slack {
                    return Err(oob());
                }
                if sigma >= lm.sigma_star {
                    return Ok(-lm.x_star);
                }
                let lo = self.expand(-lm.x_star, -T::one(), |v| v < sigma).ok_or_else(oob)?;
                (lo, -lm.x_star)
            }
            Branch::Plus => {
                if sigma < -lm.sigma_star - slack {
                    return Err(oob());
                }
                if sigma <= -lm.sigma_star {
                    return Ok(lm.x_star);
                }
                let hi = self.expand(lm.x_star, T::one(), |v| v > sigma).ok_or_else(oob)?;
                (lm.x_star, hi)
            }
            Branch::Zero => {
                if sigma.abs() > lm.sigma_star + slack {
                    return Err(oob());
                }
                if sigma >= lm.sigma_star {
                    return Ok(-lm.x_star);
                }
                if sigma <= -lm.sigma_star {
                    return Ok(lm.x_star);
                }
                (-lm.x_star, lm.x_star)
            }
        };
        safeguarded_newton(|x| (self.pot.d1(x) - sigma, self.pot.d2(x)), lo, hi).ok_or(PotentialError::NoConvergence(sigma.as_f64()))
    }

    fn expand(&self, start: T, dir: T, done: impl Fn(T) -> bool) -> Option<T> {
        let mut h = dir;
        for _ in 0..200 {
            let x = start + h;
            if done(self.pot.d1(x)) {
                return Some(x);
            }
            h = h + h;
        }
        None
    }

    /// Barrier heights `(h_-, h_+)` for `|sigma| <= sigma_*`.
    pub fn barrier_heights(&self, sigma: T) -> Result<(T, T), PotentialError> {
        let x0 = self.branch_inverse(Branch::Zero, sigma)?;
        let xm = self.branch_inverse(Branch::Minus, sigma)?;
        let xp = self.branch_inverse(Branch::Plus, sigma)?;
        let h0 = self.h(x0);
        Ok((h0 - self.h(xm) + sigma * (xm - x0), h0 - self.h(xp) + sigma * (xp - x0)))
    }

    /// Curvatures `(alpha_-, alpha_0, alpha_+) = |H''(X_i(sigma))|`.
    pub fn curvatures(&self, sigma: T) -> Result<(T, T, T), PotentialError> {
        let a = |b| self.branch_inverse(b, sigma).map(|x| self.d2(x).abs());
        Ok((a(Branch::Minus)?, a(Branch::Zero)?, a(Branch::Plus)?))
    }

    /// `H''(X_b(sigma))`, signed.
    pub fn branch_curvature(&self, branch: Branch, sigma: T) -> Result<T, PotentialError> {
        self.branch_inverse(branch, sigma).map(|x| self.d2(x))
    }
}

/// Computes the landmarks, or explains why `pot` is not a double well.
pub fn landmarks<T: Real>(pot: &dyn Potential<T>) -> Result<Landmarks<T>, PotentialError> {
    let bad = |s: &str| Err(PotentialError::NotDoubleWell(s.to_string()));
    if pot.d2(T::zero()) >= T::zero() {
        return bad("H''(0) must be negative");
    }
    // find a scan bound beyond which H'' is positive
    let mut x_scan = T::one();
    let mut found = false;
    for _ in 0..60 {
        if pot.d2(x_scan) > T::zero() {
            found = true;
            break;
        }
        x_scan = x_scan + x_scan;
    }
    if !found {
        return bad("H'' never becomes positive");
    }
    let n = 4096;
    let mut changes = 0;
    let mut bracket = (T::zero(), x_scan);
    let mut prev = pot.d2(T::zero());
    for i in 1..=n {
        let x = x_scan * T::count(i) / T::count(n);
        let v = pot.d2(x);
        if (v > T::zero()) != (prev > T::zero()) {
            changes += 1;
            bracket = (x_scan * T::count(i - 1) / T::count(n), x);
        }
        prev = v;
    }
    if changes != 1 {
        return bad("H'' must change sign exactly once on the positive axis");
    }
    let x_star = safeguarded_newton(|x| (pot.d2(x), pot.d3(x)), bracket.0, bracket.1)
        .ok_or_else(|| PotentialError::NotDoubleWell("spinodal point not found".into()))?;
    let sigma_star = -pot.d1(x_star);
    if sigma_star <= T::zero() {
        return bad("H'(x_*) must be negative");
    }
    let plus_root = |target: T| -> Option<T> {
        let mut hi = x_star + T::one();
        let mut ok = false;
        for _ in 0..200 {
            if pot.d1(hi) > target {
                ok = true;
                break;
            }
            hi = hi + (hi - x_star);
        }
        if !ok {
            return None;
        }
        safeguarded_newton(|x| (pot.d1(x) - target, pot.d2(x)), x_star, hi)
    };
    let x_star_star =
        plus_root(sigma_star).ok_or_else(|| PotentialError::NotDoubleWell("H' does not reach sigma_* on the right".into()))?;
    let x_min = plus_root(T::zero()).ok_or_else(|| PotentialError::NotDoubleWell("no right minimum".into()))?;
    let h_crit = pot.h(T::zero()) - pot.h(x_min);
    let h_star = pot.h(x_star) - pot.h(x_star_star) + sigma_star * (x_star + x_star_star);
    let m = 2000;
    let c_spinodal = (0..=m).map(|i| pot.d2(x_star * T::count(i) / T::count(m)).abs()).fold(T::zero(), T::max);
    Ok(Landmarks { x_star, sigma_star, x_star_star, h_crit, h_star, c_spinodal })
}

/// Outcome of one structural check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub ok: bool,
    pub detail: String,
}

/// Result of [`verify_assumptions`].
#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub name: String,
    /// Evenness.
    pub a1: Check,
    /// Three monotone branches of `H'` with the expected ranges.
    pub a2: Check,
    /// Concavity of `X_+(H'(x))` on the spinodal interval (and the mirrored
    /// convexity of `X_-(H'(x))`).
    pub a3: Check,
    pub landmarks: Option<Landmarks<f64>>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.a1.ok && self.a2.ok && self.a3.ok
    }
}

/// Samples the structural assumptions on `pot`.
pub fn verify_assumptions<T: Real>(pot: Arc<dyn Potential<T>>) -> AssumptionReport {
    let name = pot.name().to_string();
    let lm = landmarks(pot.as_ref());
    let span = match &lm {
        Ok(l) => l.x_star_star * c(3.0),
        Err(_) => c(4.0),
    };
    let n = 2000;
    let tol: T = T::epsilon().sqrt() * c(1e-2);
    let mut worst = T::zero();
    for i in 0..=n {
        let x = span * T::count(i) / T::count(n);
        let scale = pot.h(x).abs().max(T::one());
        worst = worst.max((pot.h(x) - pot.h(-x)).abs() / scale);
        let s1 = pot.d1(x).abs().max(T::one());
        worst = worst.max((pot.d1(x) + pot.d1(-x)).abs() / s1);
    }
    let a1 = Check { ok: worst <= tol, detail: format!("max relative asymmetry {:.3e}", worst.as_f64()) };

    let (a2, a3) = match lm {
        Err(e) => (Check { ok: false, detail: e.to_string() }, Check { ok: false, detail: "requires the branch structure".into() }),
        Ok(l) => {
            let dw = DoubleWell { pot: pot.clone(), lm: l };
            (check_branches(&dw, span), check_concavity(&dw))
        }
    };
    AssumptionReport {
        name,
        a1,
        a2,
        a3,
        landmarks: landmarks(pot.as_ref()).ok().map(|l| Landmarks {
            x_star: l.x_star.as_f64(),
            sigma_star: l.sigma_star.as_f64(),
            x_star_star: l.x_star_star.as_f64(),
            h_crit: l.h_crit.as_f64(),
            h_star: l.h_star.as_f64(),
            c_spinodal: l.c_spinodal.as_f64(),
        }),
    }
}

fn check_branches<T: Real>(dw: &DoubleWell<T>, span: T) -> Check {
    let l = dw.lm;
    let n = 2000;
    // H'' < 0 strictly inside the spinodal interval, > 0 outside
    for i in 1..n {
        let x = -l.x_star + (l.x_star + l.x_star) * T::count(i) / T::count(n);
        if dw.d2(x) >= T::zero() {
            return Check { ok: false, detail: format!("H'' >= 0 at x = {:.6}", x.as_f64()) };
        }
    }
    for i in 1..=n {
        let x = l.x_star + (span - l.x_star) * T::count(i) / T::count(n);
        if dw.d2(x) <= T::zero() || dw.d2(-x) <= T::zero() {
            return Check { ok: false, detail: format!("H'' <= 0 at |x| = {:.6}", x.as_f64()) };
        }
    }
    // the outer branches must cover the tension range [-sigma_*, sigma_*]
    let slack = T::root_tol() * l.sigma_star.max(T::one());
    if dw.d1(-l.x_star_star) > -l.sigma_star + slack || dw.d1(l.x_star_star) < l.sigma_star - slack {
        return Check { ok: false, detail: "outer branches do not cover the spinodal tension range".into() };
    }
    Check {
        ok: true,
        detail: format!("x_* = {:.12}, sigma_* = {:.12}, x_** = {:.12}", l.x_star.as_f64(), l.sigma_star.as_f64(), l.x_star_star.as_f64()),
    }
}

fn check_concavity<T: Real>(dw: &DoubleWell<T>) -> Check {
    let l = dw.lm;
    let n = 400;
    let xs: Vec<T> = (1..n).map(|i| -l.x_star + (l.x_star + l.x_star) * T::count(i) / T::count(n)).collect();
    let tol: T = T::epsilon().sqrt() * c(1e-1);
    // X_+ o H' concave; by evenness X_- o H' is then its point reflection, hence convex
    for (branch, sign) in [(Branch::Plus, T::one()), (Branch::Minus, -T::one())] {
        let g: Result<Vec<T>, _> = xs.iter().map(|&x| dw.branch_inverse(branch, dw.d1(x))).collect();
        let g = match g {
            Ok(g) => g,
            Err(e) => return Check { ok: false, detail: e.to_string() },
        };
        for k in 1..g.len() - 1 {
            let dd = sign * (g[k + 1] - g[k] - g[k] + g[k - 1]);
            if dd > tol {
                return Check { ok: false, detail: format!("X_{branch} o H' has the wrong curvature near x = {:.6}", xs[k].as_f64()) };
            }
        }
    }
    Check { ok: true, detail: "X_+ o H' concave and X_- o H' convex on the spinodal interval".into() }
}

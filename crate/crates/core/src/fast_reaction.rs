//! Fast-reaction (Kramers) regime: barrier-crossing rates, the constrained
//! two-mass exchange model, the plateau limit trajectory, the quasi-stationary
//! limit and the scaling-regime classifier.

use serde::Serialize;
use thiserror::Error;

use crate::ode::{dopri5, OdeOptions, OdeStop};
use crate::path::ConstraintPath;
use crate::potential::{Branch, DoubleWell, PotentialError};
use crate::roots::bisect;
use crate::scalar::{c, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FastError {
    #[error("{0}")]
    OutOfRange(String),
    #[error("constraint unsolvable at t = {t}, ell = {ell}")]
    Unsolvable { t: f64, ell: f64 },
    #[error("integration stopped: {0:?}")]
    Ode(OdeStop),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

fn out_of_range(msg: impl Into<String>) -> FastError {
    FastError::OutOfRange(msg.into())
}

/// Barrier parameter `b`, noise `nu` and the coupled relaxation time `tau = exp(-b / nu^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KramersParams<T> {
    pub b: T,
    pub nu: T,
    pub tau: T,
}

impl<T: Real> KramersParams<T> {
    pub fn new(b: T, nu: T) -> Result<Self, FastError> {
        if !(b > T::zero() && nu > T::zero()) {
            return Err(out_of_range("b and nu must be positive"));
        }
        Ok(Self { b, nu, tau: (-b / (nu * nu)).exp() })
    }

    pub fn from_tau(tau: T, nu: T) -> Result<Self, FastError> {
        if !(tau > T::zero() && tau < T::one() && nu > T::zero()) {
            return Err(out_of_range("tau must lie in (0, 1) and nu be positive"));
        }
        Ok(Self { b: -nu * nu * tau.ln(), nu, tau })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoMassState<T> {
    pub m_minus: T,
    pub m_plus: T,
    pub sigma: T,
    pub t: T,
}

/// `sigma_b` with `h_-(sigma_b) = b`, for `0 < b < h_crit`.
pub fn sigma_b<T: Real>(dw: &DoubleWell<T>, b: T) -> Result<T, FastError> {
    let h_crit = dw.landmarks().h_crit;
    if !(b > T::zero() && b < h_crit) {
        return Err(out_of_range(format!("b out of (0,h_crit): b = {b}, h_crit = {h_crit}")));
    }
    let ss = dw.sigma_star();
    let h_minus = |s: T| dw.barrier_heights(s).map(|h| h.0).unwrap_or(T::nan());
    bisect(|s| h_minus(s) - b, T::zero(), ss, T::epsilon() * ss * c(2.0)).ok_or_else(|| out_of_range("no root of h_-(sigma) = b"))
}

/// `D_b = (H_s(X_-(s)) - H_s(X_+(s))) / (X_+(s) - X_-(s))` at `s = sigma_b`.
pub fn d_b<T: Real>(dw: &DoubleWell<T>, sigma_b: T) -> Result<T, FastError> {
    let xm = dw.branch_inverse(Branch::Minus, sigma_b)?;
    let xp = dw.branch_inverse(Branch::Plus, sigma_b)?;
    Ok((dw.h_sigma(sigma_b, xm) - dw.h_sigma(sigma_b, xp)) / (xp - xm))
}

/// Kramers rates with their logarithms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KramersRates<T> {
    pub r_minus: T,
    pub r_plus: T,
    pub ln_r_minus: T,
    pub ln_r_plus: T,
}

/// `r_pm = sqrt(alpha_pm alpha_0) / (2 pi) exp((b - h_pm(sigma)) / nu^2)`.
pub fn kramers_rates<T: Real>(dw: &DoubleWell<T>, sigma: T, b: T, nu: T) -> Result<KramersRates<T>, FastError> {
    if !(sigma.abs() < dw.sigma_star()) {
        return Err(out_of_range(format!("|sigma| must be below sigma_*: sigma = {sigma}")));
    }
    let (am, a0, ap) = dw.curvatures(sigma)?;
    let (hm, hp) = dw.barrier_heights(sigma)?;
    let nu2 = nu * nu;
    let ln2pi = (T::PI() * c(2.0)).ln();
    let ln_r_minus = c::<T>(0.5) * (am * a0).ln() - ln2pi + (b - hm) / nu2;
    let ln_r_plus = c::<T>(0.5) * (ap * a0).ln() - ln2pi + (b - hp) / nu2;
    Ok(KramersRates { r_minus: ln_r_minus.exp(), r_plus: ln_r_plus.exp(), ln_r_minus, ln_r_plus })
}

/// Net flux `R` from the minus to the plus well at fixed `sigma`:
/// `(1/2pi) (m_- sqrt(alpha_- alpha_0) e^{-h_-/nu^2} - m_+ sqrt(alpha_+ alpha_0) e^{-h_+/nu^2})`.
pub fn flux_general<T: Real>(dw: &DoubleWell<T>, m_minus: T, m_plus: T, sigma: T, nu: T) -> Result<T, FastError> {
    let r = kramers_rates(dw, sigma, T::zero(), nu)?;
    Ok(m_minus * r.r_minus - m_plus * r.r_plus)
}

/// `gamma = -H'''(-x_*)`.
pub fn gamma<T: Real>(dw: &DoubleWell<T>) -> T {
    -dw.d3(-dw.x_star())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Case2Flux<T> {
    pub r: T,
    /// `(sigma_* - sigma)^{3/2} / nu^2`; the expansion needs this large.
    pub window: T,
    pub in_window: bool,
}

fn case2_exponent_coeff<T: Real>(g: T) -> T {
    c::<T>(4.0) * c::<T>(2.0).sqrt() / (c::<T>(3.0) * g.sqrt())
}

fn case2_prefactor<T: Real>(g: T) -> T {
    g.sqrt() / (c::<T>(2.0).sqrt() * T::PI())
}

/// Flux close to `sigma_*`:
/// `R = m_- sqrt(gamma) / (sqrt(2) pi) d^{1/2} exp(-(4 sqrt 2 / (3 sqrt gamma)) d^{3/2} / nu^2)`
/// with `d = sigma_* - sigma`.
pub fn case2_flux<T: Real>(dw: &DoubleWell<T>, sigma: T, nu: T, m_minus: T) -> Result<Case2Flux<T>, FastError> {
    let d = dw.sigma_star() - sigma;
    if !(d > T::zero()) {
        return Err(out_of_range("case-2 flux needs sigma < sigma_*"));
    }
    let g = gamma(dw);
    let window = d.powf(c(1.5)) / (nu * nu);
    let r = m_minus * case2_prefactor(g) * d.sqrt() * (-case2_exponent_coeff(g) * window).exp();
    Ok(Case2Flux { r, window, in_window: window >= c(5.0) })
}

/// Large root `K` of `p K exp(-q K^3) = tau nu^{-2/3}` (case-2 flux of order
/// `tau`), with the gap `sigma_* - sigma = K^2 nu^{4/3}`.
pub fn case2_gap<T: Real>(dw: &DoubleWell<T>, tau: T, nu: T) -> Result<(T, T), FastError> {
    let g = gamma(dw);
    let (p, q) = (case2_prefactor(g), case2_exponent_coeff(g));
    let rhs = tau * nu.powf(c(-2.0 / 3.0));
    // p K e^{-q K^3} peaks at K_m = (3q)^{-1/3}
    let k_m = (q * c(3.0)).powf(c(-1.0 / 3.0));
    let lhs = |k: T| (p * k).ln() - q * k * k * k - rhs.ln();
    if !(lhs(k_m) > T::zero()) {
        return Err(out_of_range("tau nu^{-2/3} too large for a case-2 balance"));
    }
    let mut hi = k_m * c(2.0);
    while lhs(hi) > T::zero() {
        hi = hi * c(2.0);
    }
    let k = bisect(lhs, k_m, hi, T::epsilon() * hi * c(4.0)).ok_or_else(|| out_of_range("no case-2 root"))?;
    Ok((k, k * k * nu.powf(c(4.0 / 3.0))))
}

/// Quasi-stationary limit at `ell`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QsState<T> {
    pub psi: T,
    pub m_minus: T,
    pub m_plus: T,
}

/// `psi = -ln((X - ell) / (X + ell)) / (2X)` and `m_pm = (X -+ ell) / (2X)` with `X = X_+(0)`.
pub fn qs_psi<T: Real>(dw: &DoubleWell<T>, ell: T) -> Result<QsState<T>, FastError> {
    let x = dw.branch_inverse(Branch::Plus, T::zero())?;
    if !(ell.abs() < x) {
        return Err(out_of_range(format!("|ell| must be below X_+(0) = {x}")));
    }
    let two_x = x * c(2.0);
    let psi = -((x - ell).ln() - (x + ell).ln()) / two_x;
    Ok(QsState { psi, m_minus: (x - ell) / two_x, m_plus: (x + ell) / two_x })
}

/// Which plateau the limit trajectory uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum PlateauMode<T> {
    /// `tau = exp(-b / nu^2)` with `0 < b < h_crit`.
    Kramers(T),
    /// `tau <= exp(-h_crit / nu^2)`: plateau at `sigma = 0`.
    QuasiStationary,
    /// `exp(-b / nu^2) << tau << nu^{2/3}` for every `b`: plateau at `sigma_*`.
    Limiting,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FastLimitSample<T> {
    pub t: T,
    pub ell: T,
    pub sigma: T,
    pub m_minus: T,
    pub m_plus: T,
    pub x_minus: T,
    pub x_plus: T,
    pub energy: T,
    /// `E' = sigma ell' - D_b ell'` on the plateau.
    pub energy_rate: T,
}

/// Three-piece limit trajectory: single peak, plateau at `sigma_b`, single peak.
#[derive(Clone, Debug)]
pub struct FastLimit<T: Real> {
    pub dw: DoubleWell<T>,
    pub sigma_b: T,
    pub d_b: T,
    /// `X_-(sigma_b)` and `X_+(sigma_b)`.
    pub x_minus: T,
    pub x_plus: T,
    pub t1: Option<T>,
    pub t2: Option<T>,
}

/// Builds the limit trajectory for an increasing path on `[t0, t_end]`.
pub fn limit_trajectory<T: Real>(
    dw: &DoubleWell<T>,
    mode: PlateauMode<T>,
    path: &dyn ConstraintPath<T>,
    t0: T,
    t_end: T,
) -> Result<FastLimit<T>, FastError> {
    let sb = match mode {
        PlateauMode::Kramers(b) => sigma_b(dw, b)?,
        PlateauMode::QuasiStationary => T::zero(),
        PlateauMode::Limiting => dw.sigma_star(),
    };
    if !(path.ell(t_end) > path.ell(t0)) {
        return Err(out_of_range("limit trajectory needs an increasing path"));
    }
    let x_minus = dw.branch_inverse(Branch::Minus, sb)?;
    let x_plus = dw.branch_inverse(Branch::Plus, sb)?;
    Ok(FastLimit {
        dw: dw.clone(),
        sigma_b: sb,
        d_b: d_b(dw, sb)?,
        x_minus,
        x_plus,
        t1: path.time_at(x_minus, t0, t_end),
        t2: path.time_at(x_plus, t0, t_end),
    })
}

impl<T: Real> FastLimit<T> {
    /// Limit state at constraint value `ell` with rate `ell_dot`.
    pub fn at_ell(&self, t: T, ell: T, ell_dot: T) -> FastLimitSample<T> {
        let dw = &self.dw;
        let (sigma, m_minus) = if ell <= self.x_minus {
            (dw.d1(ell), T::one())
        } else if ell >= self.x_plus {
            (dw.d1(ell), T::zero())
        } else {
            (self.sigma_b, (self.x_plus - ell) / (self.x_plus - self.x_minus))
        };
        let m_plus = T::one() - m_minus;
        let on_plateau = ell > self.x_minus && ell < self.x_plus;
        let (x_minus, x_plus) = if on_plateau {
            (self.x_minus, self.x_plus)
        } else if m_minus > T::zero() {
            (ell, T::nan())
        } else {
            (T::nan(), ell)
        };
        let energy = if on_plateau { m_minus * dw.h(x_minus) + m_plus * dw.h(x_plus) } else { dw.h(ell) };
        let energy_rate = if on_plateau { (sigma - self.d_b) * ell_dot } else { sigma * ell_dot };
        FastLimitSample { t, ell, sigma, m_minus, m_plus, x_minus, x_plus, energy, energy_rate }
    }

    pub fn sample(&self, path: &dyn ConstraintPath<T>, t: T) -> FastLimitSample<T> {
        self.at_ell(t, path.ell(t), path.ell_dot(t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KramersSample<T> {
    pub t: T,
    pub ell: T,
    pub sigma: T,
    /// `(sigma - sigma_b) / nu^2`.
    pub psi: T,
    pub m_minus: T,
    pub m_plus: T,
    pub energy: T,
}

#[derive(Clone, Copy, Debug)]
pub struct KramersOdeOptions<T> {
    pub ode: OdeOptions<T>,
    /// Below this the minus mass is treated as exhausted.
    pub m_floor: T,
    /// Output spacing after the transfer has finished.
    pub dt_tail: T,
}

impl<T: Real> Default for KramersOdeOptions<T> {
    fn default() -> Self {
        Self {
            ode: OdeOptions { atol: c(1e-14), rtol: c(1e-9), h_init: c(1e-4), h_max: c(1e-2), ..OdeOptions::default() },
            m_floor: c(1e-10),
            dt_tail: c(1e-2),
        }
    }
}

/// `sigma` with `m X_-(sigma) + (1 - m) X_+(sigma) = ell`; a single occupied
/// well gives `sigma = H'(ell)`.
pub fn two_mass_sigma<T: Real>(dw: &DoubleWell<T>, ell: T, m_minus: T, m_floor: T) -> Option<T> {
    let (xs, ss) = (dw.x_star(), dw.sigma_star());
    let single_minus = |ell: T| (ell <= -xs).then(|| dw.d1(ell));
    let single_plus = |ell: T| (ell >= xs).then(|| dw.d1(ell));
    if m_minus >= T::one() {
        return single_minus(ell);
    }
    if m_minus <= T::zero() {
        return single_plus(ell);
    }
    let m_plus = T::one() - m_minus;
    let ell_of = |s: T| -> T {
        let xm = dw.branch_inverse(Branch::Minus, s).unwrap_or(T::nan());
        let xp = dw.branch_inverse(Branch::Plus, s).unwrap_or(T::nan());
        m_minus * xm + m_plus * xp
    };
    let (lo, hi) = (ell_of(-ss), ell_of(ss));
    if ell < lo {
        return if m_plus < m_floor { single_minus(ell) } else { None };
    }
    if ell > hi {
        return if m_minus < m_floor { single_plus(ell) } else { None };
    }
    bisect(|s| ell_of(s) - ell, -ss, ss, T::epsilon() * ss * c(4.0))
}

fn two_mass_energy<T: Real>(dw: &DoubleWell<T>, sigma: T, m_minus: T, ell: T) -> T {
    if m_minus >= T::one() || m_minus <= T::zero() || sigma.abs() > dw.sigma_star() {
        return dw.h(ell);
    }
    let xm = dw.branch_inverse(Branch::Minus, sigma).unwrap_or(T::nan());
    let xp = dw.branch_inverse(Branch::Plus, sigma).unwrap_or(T::nan());
    m_minus * dw.h(xm) + (T::one() - m_minus) * dw.h(xp)
}

/// Two-mass validation model: peaks sit at `X_pm(sigma)`, `sigma` follows from
/// the constraint and mass moves by `m_-' = -(m_- r_-(sigma) - m_+ r_+(sigma))`.
pub fn constrained_kramers_ode<T: Real>(
    dw: &DoubleWell<T>,
    b: T,
    nu: T,
    path: &dyn ConstraintPath<T>,
    m0: T,
    t0: T,
    t_end: T,
    opts: &KramersOdeOptions<T>,
) -> Result<Vec<KramersSample<T>>, FastError> {
    if !(b > T::zero() && nu > T::zero()) || !(m0 >= T::zero() && m0 <= T::one()) {
        return Err(out_of_range("need b > 0, nu > 0 and m0 in [0, 1]"));
    }
    let sb = if b < dw.landmarks().h_crit { sigma_b(dw, b)? } else { T::zero() };
    let nu2 = nu * nu;
    let ss = dw.sigma_star();
    let floor = opts.m_floor;
    let ell0 = path.ell(t0);
    two_mass_sigma(dw, ell0, m0, floor).ok_or(FastError::Unsolvable { t: t0.as_f64(), ell: ell0.as_f64() })?;
    let mut failure: Option<FastError> = None;
    let rhs = |t: T, y: &[T], dy: &mut [T]| {
        let m = y[0].max(T::zero()).min(T::one());
        let ell = path.ell(t);
        let Some(s) = two_mass_sigma(dw, ell, m, floor) else {
            dy[0] = T::nan();
            return;
        };
        dy[0] = if s.abs() < ss {
            match kramers_rates(dw, s, b, nu) {
                Ok(r) => {
                    let out = if m > T::zero() { (m.ln() + r.ln_r_minus).exp() } else { T::zero() };
                    let back = if m < T::one() { ((T::one() - m).ln() + r.ln_r_plus).exp() } else { T::zero() };
                    back - out
                }
                Err(_) => T::nan(),
            }
        } else {
            T::zero()
        };
    };
    let sol = dopri5(rhs, t0, &[m0], t_end, &opts.ode, |_, y| y[0] < floor);
    match sol.stop {
        OdeStop::Finished | OdeStop::Halted => {}
        OdeStop::NonFinite => {
            let t = sol.t.last().copied().unwrap_or(t0);
            failure = Some(FastError::Unsolvable { t: t.as_f64(), ell: path.ell(t).as_f64() });
        }
        other => failure = Some(FastError::Ode(other)),
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let mut out = Vec::with_capacity(sol.t.len());
    let mut push = |t: T, m: T| -> Result<(), FastError> {
        let ell = path.ell(t);
        let sigma = two_mass_sigma(dw, ell, m, floor).ok_or(FastError::Unsolvable { t: t.as_f64(), ell: ell.as_f64() })?;
        let energy = two_mass_energy(dw, sigma, m, ell);
        out.push(KramersSample { t, ell, sigma, psi: (sigma - sb) / nu2, m_minus: m, m_plus: T::one() - m, energy });
        Ok(())
    };
    for (t, y) in sol.t.iter().zip(&sol.y) {
        push(*t, y[0].max(T::zero()).min(T::one()))?;
    }
    if sol.stop == OdeStop::Halted {
        let t_last = *sol.t.last().unwrap();
        let mut k = 1;
        loop {
            let t = t_last + opts.dt_tail * T::count(k);
            if t >= t_end {
                push(t_end, T::zero())?;
                break;
            }
            push(t, T::zero())?;
            k += 1;
        }
    }
    Ok(out)
}

/// Predicted plateau offset `psi = ln(2 pi ell' / (sqrt(alpha_- alpha_0) (X_+ - X_-) m_-)) / |h_-'(sigma_b)|`.
pub fn psi_prediction<T: Real>(dw: &DoubleWell<T>, sigma_b: T, ell_dot: T, m_minus: T) -> Result<T, FastError> {
    let (am, a0, _) = dw.curvatures(sigma_b)?;
    let xm = dw.branch_inverse(Branch::Minus, sigma_b)?;
    let xp = dw.branch_inverse(Branch::Plus, sigma_b)?;
    // h_-'(s) = X_- - X_0
    let x0 = dw.branch_inverse(Branch::Zero, sigma_b)?;
    let slope = (xm - x0).abs();
    let arg = T::PI() * c(2.0) * ell_dot / ((am * a0).sqrt() * (xp - xm) * m_minus);
    Ok(arg.ln() / slope)
}

/// Scaling regimes of the `(tau, nu)` plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Regime {
    SlowI,
    SlowII,
    Open,
    FastIIILimiting,
    FastIIIKramers,
    FastIV,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::SlowI => "slow-I",
            Regime::SlowII => "slow-II",
            Regime::Open => "OPEN",
            Regime::FastIIILimiting => "fast-III-limiting",
            Regime::FastIIIKramers => "fast-III-Kramers",
            Regime::FastIV => "fast-IV",
        }
    }

    pub fn is_supported(self) -> bool {
        self != Regime::Open
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("tau and nu must lie in (0, 1)")]
    OutOfRange,
    #[error("slow regime: a = tau ln(1/nu) = {0} must be compared with a caller-supplied a_crit")]
    NeedsACrit(f64),
}

/// Effective exponents of a `(tau, nu)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegimeCoordinates {
    /// `b = nu^2 ln(1/tau)`, so that `tau = exp(-b / nu^2)`.
    pub b: f64,
    /// `p = ln tau / ln nu`, so that `tau = nu^p`.
    pub p: f64,
    /// `a = tau ln(1/nu)`, so that `tau = a / ln(1/nu)`.
    pub a: f64,
}

impl RegimeCoordinates {
    pub fn new(tau: f64, nu: f64) -> Self {
        let (lt, ln) = (tau.ln(), nu.ln());
        Self { b: -nu * nu * lt, p: lt / ln, a: -tau * ln }
    }
}

/// Maps `(tau, nu)` to a scaling regime.
///
/// The rows are asymptotic families, so finite pairs are separated at
/// intermediate scales: `tau = exp(-1/nu)` (i.e. `b = nu`) between the
/// Kramers family and the power-law family `p > 2/3`, and
/// `tau = 1 / ln(1/nu)^2` (i.e. `a = 1 / ln(1/nu)`) between the
/// logarithmic family and power laws with `p < 2/3`.
pub fn classify_regime(tau: f64, nu: f64, h_crit: f64, a_crit: Option<f64>) -> Result<Regime, ClassifyError> {
    if !(tau > 0.0 && tau < 1.0 && nu > 0.0 && nu < 1.0) {
        return Err(ClassifyError::OutOfRange);
    }
    let k = RegimeCoordinates::new(tau, nu);
    if k.b >= h_crit {
        return Ok(Regime::FastIV);
    }
    if k.p > 2.0 / 3.0 {
        return Ok(if k.b >= nu { Regime::FastIIIKramers } else { Regime::FastIIILimiting });
    }
    if k.a < 1.0 / (1.0 / nu).ln() {
        return Ok(Regime::Open);
    }
    match a_crit {
        Some(ac) if k.a > ac => Ok(Regime::SlowI),
        Some(_) => Ok(Regime::SlowII),
        None => Err(ClassifyError::NeedsACrit(k.a)),
    }
}

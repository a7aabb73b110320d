//! Slow-reaction limit as an event-driven hybrid system.
//!
//! The state is a multiplier `sigma`, a widening variable `phi in [-a, 0]` and
//! masses `(m_-, m_0, m_+)` on the branches `X_-, X_0, X_+`, at most two of
//! them positive. Between events the peaks follow the quasi-stationary
//! constraint `sum m_i X_i(sigma) = ell(t)` and `phi' = A_0(sigma)` while an
//! unstable peak exists, with `A_i = H''(X_i)`.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::mass_splitting::{run_split, MTable, SplitOptions};
use crate::path::ConstraintPath;
use crate::potential::{Branch, DoubleWell, PotentialError};
use crate::quad::{adaptive, tanh_sinh};
use crate::roots::bisect;
use crate::scalar::{c, Real};
use crate::two_peaks::{tangency, z_function, TpmError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("state is at an event boundary")]
    AtBoundary,
    #[error("constraint ell = {ell} unsolvable in {config} at t = {t}")]
    Unsolvable { t: f64, ell: f64, config: Configuration },
    #[error("mass-transfer lookup failed: {0}")]
    SplitLookup(String),
    #[error("event cap of {0} exceeded")]
    EventCap(usize),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    TwoPeaks(#[from] TpmError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Configuration {
    SMinus,
    SZero,
    SPlus,
    TMinusPlus,
    TMinusZero,
    TZeroPlus,
}

impl Configuration {
    /// Configuration for a mass pattern; `None` unless at least one mass is
    /// positive and at most two are.
    pub fn from_masses<T: Real>(m_minus: T, m_zero: T, m_plus: T) -> Option<Self> {
        let z = T::zero();
        match (m_minus > z, m_zero > z, m_plus > z) {
            (true, false, false) => Some(Self::SMinus),
            (false, true, false) => Some(Self::SZero),
            (false, false, true) => Some(Self::SPlus),
            (true, false, true) => Some(Self::TMinusPlus),
            (true, true, false) => Some(Self::TMinusZero),
            (false, true, true) => Some(Self::TZeroPlus),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::SMinus => "S-",
            Self::SZero => "S0",
            Self::SPlus => "S+",
            Self::TMinusPlus => "T-+",
            Self::TMinusZero => "T-0",
            Self::TZeroPlus => "T0+",
        }
    }

    pub fn has_unstable(self) -> bool {
        matches!(self, Self::SZero | Self::TMinusZero | Self::TZeroPlus)
    }

    /// Point reflection `x -> -x`.
    pub fn mirrored(self) -> Self {
        match self {
            Self::SMinus => Self::SPlus,
            Self::SPlus => Self::SMinus,
            Self::TMinusZero => Self::TZeroPlus,
            Self::TZeroPlus => Self::TMinusZero,
            other => other,
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EventKind {
    Switching,
    InverseSwitching,
    Splitting,
    MergingContinuous,
    MergingDiscontinuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LimitState<T> {
    pub config: Configuration,
    pub m_minus: T,
    pub m_zero: T,
    pub m_plus: T,
    pub sigma: T,
    pub phi: T,
    pub t: T,
}

impl<T: Real> LimitState<T> {
    /// Single stable or unstable peak at `ell`.
    pub fn single_peak(dw: &DoubleWell<T>, ell: T, t: T) -> Self {
        let xs = dw.x_star();
        let (config, m) = if ell <= -xs {
            (Configuration::SMinus, (T::one(), T::zero(), T::zero()))
        } else if ell >= xs {
            (Configuration::SPlus, (T::zero(), T::zero(), T::one()))
        } else {
            (Configuration::SZero, (T::zero(), T::one(), T::zero()))
        };
        Self { config, m_minus: m.0, m_zero: m.1, m_plus: m.2, sigma: dw.d1(ell), phi: T::zero(), t }
    }

    /// State with the given masses whose `sigma` matches `ell`.
    pub fn from_ell(dw: &DoubleWell<T>, masses: (T, T, T), phi: T, ell: T, t: T) -> Result<Self, LimitError> {
        let config =
            Configuration::from_masses(masses.0, masses.1, masses.2).ok_or_else(|| LimitError::InvalidState("mass pattern".into()))?;
        let mut s = Self { config, m_minus: masses.0, m_zero: masses.1, m_plus: masses.2, sigma: T::zero(), phi, t };
        let leg = Leg::new(dw, &s)?;
        s.sigma = leg.solve(dw, ell).ok_or(LimitError::Unsolvable { t: t.as_f64(), ell: ell.as_f64(), config })?;
        Ok(s)
    }

    fn masses(&self) -> [(Branch, T); 3] {
        [(Branch::Minus, self.m_minus), (Branch::Zero, self.m_zero), (Branch::Plus, self.m_plus)]
    }

    /// Peak positions `X_i(sigma)` for positive masses.
    pub fn positions(&self, dw: &DoubleWell<T>) -> [Option<T>; 3] {
        self.masses().map(|(b, m)| if m > T::zero() { dw.branch_inverse(b, self.sigma).ok() } else { None })
    }

    pub fn ell(&self, dw: &DoubleWell<T>) -> T {
        ell_of(dw, &self.masses(), self.sigma)
    }

    pub fn energy(&self, dw: &DoubleWell<T>) -> T {
        self.masses()
            .iter()
            .filter(|(_, m)| *m > T::zero())
            .map(|&(b, m)| m * dw.h(dw.branch_inverse(b, self.sigma).unwrap_or(T::nan())))
            .sum()
    }

    /// Checks the membership conditions of the state's configuration.
    pub fn validate(&self, dw: &DoubleWell<T>, a: T) -> Result<(), LimitError> {
        let bad = |s: &str| Err(LimitError::InvalidState(s.to_string()));
        let tol: T = c(1e-9);
        let z = T::zero();
        if self.m_minus < z || self.m_zero < z || self.m_plus < z {
            return bad("negative mass");
        }
        if (self.m_minus + self.m_zero + self.m_plus - T::one()).abs() > tol {
            return bad("masses do not sum to one");
        }
        if self.m_minus * self.m_zero * self.m_plus != z {
            return bad("three positive masses");
        }
        if Configuration::from_masses(self.m_minus, self.m_zero, self.m_plus) != Some(self.config) {
            return bad("configuration does not match masses");
        }
        if self.config.has_unstable() {
            if self.phi < -a - tol || self.phi > tol {
                return bad("phi outside [-a, 0]");
            }
        } else if self.phi != z {
            return bad("phi must vanish without an unstable peak");
        }
        let leg = Leg::new(dw, self)?;
        let slack = tol * (T::one() + self.sigma.abs());
        if self.sigma < leg.s_lo - slack || self.sigma > leg.s_hi + slack {
            return bad("sigma outside the configuration range");
        }
        Ok(())
    }

    /// Point reflection `x -> -x`.
    pub fn mirrored(&self) -> Self {
        Self {
            config: self.config.mirrored(),
            m_minus: self.m_plus,
            m_zero: self.m_zero,
            m_plus: self.m_minus,
            sigma: -self.sigma,
            ..*self
        }
    }
}

fn ell_of<T: Real>(dw: &DoubleWell<T>, masses: &[(Branch, T); 3], sigma: T) -> T {
    masses.iter().filter(|(_, m)| *m > T::zero()).map(|&(b, m)| m * dw.branch_inverse(b, sigma).unwrap_or(T::nan())).sum()
}

/// Which end of the configuration's `sigma` range is reached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum End {
    Lo,
    Hi,
}

/// Range data of one configuration with fixed masses.
#[derive(Clone, Copy, Debug)]
struct Leg<T> {
    config: Configuration,
    masses: [(Branch, T); 3],
    s_lo: T,
    s_hi: T,
    /// `ell` at `s_lo` and `s_hi`.
    ell_lo: T,
    ell_hi: T,
    /// Whether the end is a fold of `ell(sigma)` (discontinuous merging).
    fold: Option<End>,
}

impl<T: Real> Leg<T> {
    fn new(dw: &DoubleWell<T>, s: &LimitState<T>) -> Result<Self, LimitError> {
        use Configuration::*;
        let ss = dw.sigma_star();
        let masses = s.masses();
        let (mut s_lo, mut s_hi) = (-ss, ss);
        let mut fold = None;
        match s.config {
            SMinus => s_lo = T::neg_infinity(),
            SPlus => s_hi = T::infinity(),
            TZeroPlus => {
                if let Some(f) = fold_sigma(dw, s.config, s.m_minus, s.m_zero, s.m_plus) {
                    s_lo = f;
                    fold = Some(End::Lo);
                }
            }
            TMinusZero => {
                if let Some(f) = fold_sigma(dw, s.config, s.m_minus, s.m_zero, s.m_plus) {
                    s_hi = f;
                    fold = Some(End::Hi);
                }
            }
            SZero | TMinusPlus => {}
        }
        let ell_end = |sigma: T| {
            if sigma.is_infinite() {
                sigma
            } else {
                ell_of(dw, &masses, sigma)
            }
        };
        Ok(Self { config: s.config, masses, s_lo, s_hi, ell_lo: ell_end(s_lo), ell_hi: ell_end(s_hi), fold })
    }

    fn increasing(&self) -> bool {
        !self.config.has_unstable()
    }

    /// End of the range that `ell` lies strictly beyond, if any.
    fn exit(&self, ell: T) -> Option<End> {
        if self.increasing() {
            if ell < self.ell_lo {
                Some(End::Lo)
            } else if ell > self.ell_hi {
                Some(End::Hi)
            } else {
                None
            }
        } else if ell > self.ell_lo {
            Some(End::Lo)
        } else if ell < self.ell_hi {
            Some(End::Hi)
        } else {
            None
        }
    }

    fn end_sigma(&self, end: End) -> T {
        match end {
            End::Lo => self.s_lo,
            End::Hi => self.s_hi,
        }
    }

    fn solve(&self, dw: &DoubleWell<T>, ell: T) -> Option<T> {
        if self.exit(ell).is_some() || !ell.is_finite() {
            return None;
        }
        let single = self.masses.iter().filter(|(_, m)| *m > T::zero()).count() == 1;
        if single {
            return Some(dw.d1(ell));
        }
        if ell == self.ell_lo {
            return Some(self.s_lo);
        }
        if ell == self.ell_hi {
            return Some(self.s_hi);
        }
        bisect(|s| ell_of(dw, &self.masses, s) - ell, self.s_lo, self.s_hi, T::epsilon() * c(4.0))
    }

    /// Event kind and target configuration when leaving through `end`.
    fn exit_kind(&self, end: End) -> (EventKind, Configuration) {
        use Configuration::*;
        use EventKind::*;
        match (self.config, end) {
            (SMinus, _) | (SPlus, _) => (Switching, SZero),
            (SZero, End::Lo) => (InverseSwitching, SPlus),
            (SZero, End::Hi) => (InverseSwitching, SMinus),
            (TMinusPlus, End::Hi) => (Switching, TZeroPlus),
            (TMinusPlus, End::Lo) => (Switching, TMinusZero),
            (TZeroPlus, End::Hi) => (InverseSwitching, TMinusPlus),
            (TZeroPlus, End::Lo) => (if self.fold.is_some() { MergingDiscontinuous } else { MergingContinuous }, SPlus),
            (TMinusZero, End::Lo) => (InverseSwitching, TMinusPlus),
            (TMinusZero, End::Hi) => (if self.fold.is_some() { MergingDiscontinuous } else { MergingContinuous }, SMinus),
        }
    }
}

/// Fold of `ell(sigma)` for `T0+` (scanning down from `sigma_*`) or `T-0`
/// (scanning up from `-sigma_*`): first root of `Z_0+ = m_0 A_+ + m_+ A_0`
/// or `Z_-0 = m_- A_0 + m_0 A_-`.
pub fn fold_sigma<T: Real>(dw: &DoubleWell<T>, config: Configuration, m_minus: T, m_zero: T, m_plus: T) -> Option<T> {
    let ss = dw.sigma_star();
    let a = |b: Branch, s: T| dw.branch_curvature(b, s).unwrap_or(T::nan());
    let (z, start, dir): (Box<dyn Fn(T) -> T>, T, T) = match config {
        Configuration::TZeroPlus => (Box::new(move |s| m_zero * a(Branch::Plus, s) + m_plus * a(Branch::Zero, s)), ss, -T::one()),
        Configuration::TMinusZero => (Box::new(move |s| m_minus * a(Branch::Zero, s) + m_zero * a(Branch::Minus, s)), -ss, T::one()),
        _ => return None,
    };
    let n = 4096;
    let step = (ss + ss) / T::count(n);
    let mut prev = start;
    for k in 1..n {
        let s = start + dir * step * T::count(k);
        if z(s) <= T::zero() {
            return bisect(&z, prev, s, T::epsilon() * c(4.0));
        }
        prev = s;
    }
    None
}

/// Regular dynamics `(sigma', phi')`: `sigma' = ell' / sum(m_i / A_i)` and
/// `phi' = A_0` while `m_0 > 0`.
pub fn regular_rhs<T: Real>(dw: &DoubleWell<T>, state: &LimitState<T>, ell_dot: T) -> Result<(T, T), LimitError> {
    let ss = dw.sigma_star();
    if state.config != Configuration::SMinus && state.config != Configuration::SPlus && state.sigma.abs() >= ss {
        return Err(LimitError::AtBoundary);
    }
    let mut inv = T::zero();
    for (b, m) in state.masses() {
        if m > T::zero() {
            let ai = dw.branch_curvature(b, state.sigma)?;
            if ai == T::zero() {
                return Err(LimitError::AtBoundary);
            }
            inv = inv + m / ai;
        }
    }
    if inv == T::zero() {
        return Err(LimitError::AtBoundary);
    }
    let dphi = if state.m_zero > T::zero() { dw.branch_curvature(Branch::Zero, state.sigma)? } else { T::zero() };
    Ok((ell_dot / inv, dphi))
}

/// Event whose boundary condition is active at `state`, with the direction
/// of motion from `ell_dot`. Splitting takes priority.
pub fn detect_event<T: Real>(dw: &DoubleWell<T>, state: &LimitState<T>, a: T, ell_dot: T) -> Result<Option<EventKind>, LimitError> {
    let tol: T = c(1e-9);
    if state.m_zero > T::zero() && state.phi <= -a + tol {
        return Ok(Some(EventKind::Splitting));
    }
    let leg = Leg::new(dw, state)?;
    // direction of sigma from the sign of d ell / d sigma
    let sigma_up = (ell_dot > T::zero()) == leg.increasing();
    if ell_dot == T::zero() {
        return Ok(None);
    }
    if sigma_up && state.sigma >= leg.s_hi - tol {
        return Ok(Some(leg.exit_kind(End::Hi).0));
    }
    if !sigma_up && state.sigma <= leg.s_lo + tol {
        return Ok(Some(leg.exit_kind(End::Lo).0));
    }
    Ok(None)
}

/// Source of the mass-transfer function.
pub trait MassSplitProvider<T>: Send + Sync {
    /// Mass that ends right of `X_0(sigma)` when an unstable peak of mass
    /// `m_u` at `X_0(sigma)` splits next to a stable peak of mass `1 - m_u`
    /// on branch `stable`.
    fn transfer(&self, m_u: T, sigma: T, stable: Branch) -> Result<T, LimitError>;
}

/// Solves the mass-splitting problem on demand.
#[derive(Clone, Debug)]
pub struct LiveSplit<T: Real> {
    pub dw: DoubleWell<T>,
    pub opts: SplitOptions<T>,
}

impl<T: Real> MassSplitProvider<T> for LiveSplit<T> {
    fn transfer(&self, m_u: T, sigma: T, stable: Branch) -> Result<T, LimitError> {
        let opts = SplitOptions { stable, ..self.opts };
        run_split(&self.dw, m_u, sigma, &opts).map(|r| r.m12).map_err(|e| LimitError::SplitLookup(e.to_string()))
    }
}

/// Bilinear lookup in a table computed with the stable peak on `X_+`; the
/// `X_-` case uses the reflection `m_u - M(m_u, -sigma)`, exact for even `H`.
impl<T: Real> MassSplitProvider<T> for MTable<T> {
    fn transfer(&self, m_u: T, sigma: T, stable: Branch) -> Result<T, LimitError> {
        let look = |s: T| {
            self.interpolate(m_u, s).ok_or_else(|| LimitError::SplitLookup(format!("({}, {}) outside table", m_u.as_f64(), s.as_f64())))
        };
        match stable {
            Branch::Minus => Ok(m_u - look(-sigma)?),
            _ => look(sigma),
        }
    }
}

/// Mass transfer from a closure `(m_u, sigma, stable) -> m12`.
pub struct FnSplit<F>(pub F);

impl<T: Real, F: Fn(T, T, Branch) -> T + Send + Sync> MassSplitProvider<T> for FnSplit<F> {
    fn transfer(&self, m_u: T, sigma: T, stable: Branch) -> Result<T, LimitError> {
        Ok((self.0)(m_u, sigma, stable))
    }
}

/// Masses are snapped to exact zeros and ones after a jump.
fn canonical<T: Real>(m: (T, T, T)) -> (T, T, T) {
    let tiny: T = c(1e-14);
    let snap = |x: T| if x.abs() <= tiny { T::zero() } else { x };
    let (a, b, cc) = (snap(m.0), snap(m.1), snap(m.2));
    let count = [a, b, cc].iter().filter(|x| **x > T::zero()).count();
    if count == 1 {
        let one = T::one();
        return (
            if a > T::zero() { one } else { T::zero() },
            if b > T::zero() { one } else { T::zero() },
            if cc > T::zero() { one } else { T::zero() },
        );
    }
    (a, b, cc)
}

/// Applies the jump rule of `kind` at the event state `state` (which sits on
/// the boundary) with current constraint value `ell`.
pub fn apply_jump<T: Real>(
    dw: &DoubleWell<T>,
    state: &LimitState<T>,
    kind: EventKind,
    ell: T,
    provider: &dyn MassSplitProvider<T>,
) -> Result<LimitState<T>, LimitError> {
    use Configuration::*;
    let (mm, m0, mp) = (state.m_minus, state.m_zero, state.m_plus);
    let z = T::zero();
    let ss = dw.sigma_star();
    let at_hi = state.sigma > T::zero();
    let mut post = *state;
    let masses = match kind {
        EventKind::Switching => match (state.config, at_hi) {
            (SMinus, _) | (TMinusPlus, true) => (z, mm, mp),
            (SPlus, _) | (TMinusPlus, false) => (mm, mp, z),
            _ => return Err(LimitError::InvalidState(format!("no switching from {}", state.config))),
        },
        EventKind::InverseSwitching | EventKind::MergingContinuous | EventKind::MergingDiscontinuous => {
            post.phi = z;
            match state.config {
                SZero if at_hi => (m0, z, z),
                SZero => (z, z, m0),
                TZeroPlus if kind == EventKind::InverseSwitching => (m0, z, mp),
                TMinusZero if kind == EventKind::InverseSwitching => (mm, z, m0),
                TZeroPlus => (z, z, m0 + mp),
                TMinusZero => (mm + m0, z, z),
                _ => return Err(LimitError::InvalidState(format!("no {kind:?} from {}", state.config))),
            }
        }
        EventKind::Splitting => {
            post.phi = z;
            let (stable, other) = if mm > z { (Branch::Minus, mm) } else { (Branch::Plus, mp) };
            if m0 <= z {
                return Err(LimitError::InvalidState("splitting without an unstable peak".into()));
            }
            let m12 = provider.transfer(m0, state.sigma.max(-ss).min(ss), stable)?;
            if !(m12 >= z && m12 <= m0) {
                return Err(LimitError::SplitLookup(format!("m12 = {} outside [0, {}]", m12.as_f64(), m0.as_f64())));
            }
            match stable {
                Branch::Minus => (other + m0 - m12, z, m12),
                _ => (m0 - m12, z, other + m12),
            }
        }
    };
    let (a, b, cc) = canonical(masses);
    post.m_minus = a;
    post.m_zero = b;
    post.m_plus = cc;
    post.config = Configuration::from_masses(a, b, cc).ok_or_else(|| LimitError::InvalidState("empty state".into()))?;
    if !post.config.has_unstable() {
        post.phi = z;
    }
    // sigma is continuous at switching and continuous merging, re-solved otherwise
    if matches!(kind, EventKind::Splitting | EventKind::MergingDiscontinuous) {
        let leg = Leg::new(dw, &post)?;
        let tol = c::<T>(1e-9) * (T::one() + ell.abs());
        post.sigma = leg
            .solve(dw, ell)
            .or_else(|| {
                // on the boundary up to rounding
                if (ell - leg.ell_lo).abs() <= tol {
                    Some(leg.s_lo)
                } else if (ell - leg.ell_hi).abs() <= tol {
                    Some(leg.s_hi)
                } else {
                    None
                }
            })
            .ok_or(LimitError::Unsolvable { t: state.t.as_f64(), ell: ell.as_f64(), config: post.config })?;
    }
    Ok(post)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EventRecord<T> {
    pub t: T,
    pub kind: EventKind,
    pub pre: LimitState<T>,
    pub post: LimitState<T>,
    pub d_sigma: T,
    pub d_energy: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LimitSample<T> {
    pub t: T,
    pub ell: T,
    pub config: Configuration,
    pub m_minus: T,
    pub m_zero: T,
    pub m_plus: T,
    pub sigma: T,
    pub phi: T,
    pub energy: T,
}

#[derive(Clone, Debug)]
pub struct LimitTrajectory<T> {
    pub samples: Vec<LimitSample<T>>,
    pub events: Vec<EventRecord<T>>,
}

#[derive(Clone, Copy, Debug)]
pub struct LimitOptions<T> {
    /// Spacing of the scan grid on which samples are recorded.
    pub dt_scan: T,
    /// Event-time localisation tolerance.
    pub t_tol: T,
    pub max_events: usize,
}

impl<T: Real> Default for LimitOptions<T> {
    fn default() -> Self {
        Self { dt_scan: c(1e-3), t_tol: c(1e-10), max_events: 10_000 }
    }
}

fn sample<T: Real>(dw: &DoubleWell<T>, s: &LimitState<T>, ell: T) -> LimitSample<T> {
    LimitSample {
        t: s.t,
        ell,
        config: s.config,
        m_minus: s.m_minus,
        m_zero: s.m_zero,
        m_plus: s.m_plus,
        sigma: s.sigma,
        phi: s.phi,
        energy: s.energy(dw),
    }
}

/// Integrates the limit model from `init` (whose `sigma` is recomputed from
/// `ell(init.t)`) up to `t_end`.
///
/// A single unstable peak leaving the spinodal region on the side opposite
/// to where it entered is reported as `MergingContinuous`.
pub fn integrate<T: Real>(
    dw: &DoubleWell<T>,
    a: T,
    path: &dyn ConstraintPath<T>,
    init: LimitState<T>,
    t_end: T,
    provider: &dyn MassSplitProvider<T>,
    opts: &LimitOptions<T>,
) -> Result<LimitTrajectory<T>, LimitError> {
    let t0 = init.t;
    let masses = (init.m_minus, init.m_zero, init.m_plus);
    let mut state = LimitState::from_ell(dw, masses, init.phi, path.ell(t0), t0)?;
    state.validate(dw, a)?;
    let mut samples = vec![sample(dw, &state, path.ell(t0))];
    let mut events: Vec<EventRecord<T>> = Vec::new();
    let mut s0_entry: Option<End> = None;
    let h = opts.dt_scan;
    let mut k = 0usize;
    let quad_tol: T = c(1e-13);
    while state.t < t_end {
        let leg = Leg::new(dw, &state)?;
        while t0 + h * T::count(k) <= state.t {
            k += 1;
        }
        let t_a = state.t;
        let t_next = (t0 + h * T::count(k)).min(t_end);
        // the exit bisection lands just past the boundary, so clamp into the leg
        let (ell_min, ell_max) = (leg.ell_lo.min(leg.ell_hi), leg.ell_lo.max(leg.ell_hi));
        let sigma_at = |t: T| {
            let ell = path.ell(t).max(ell_min).min(ell_max);
            leg.solve(dw, ell).unwrap_or(T::nan())
        };
        // boundary crossing of ell
        let mut t_b = t_next;
        let mut exit = leg.exit(path.ell(t_next));
        if let Some(end) = exit {
            let (mut lo, mut hi) = (t_a, t_next);
            while hi - lo > opts.t_tol {
                let mid = lo + (hi - lo) * c(0.5);
                if leg.exit(path.ell(mid)) == Some(end) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            t_b = hi;
        }
        // widening
        let mut phi_b = state.phi;
        let mut split_t = None;
        if state.m_zero > T::zero() {
            let a0 = |t: T| dw.branch_curvature(Branch::Zero, sigma_at(t)).unwrap_or(T::nan());
            let tol = quad_tol;
            let phi_of = |t: T| state.phi + adaptive(a0, t_a, t, tol);
            phi_b = phi_of(t_b);
            if phi_b + a <= T::zero() {
                let ts = bisect(|t| phi_of(t) + a, t_a, t_b, opts.t_tol).unwrap_or(t_b);
                split_t = Some(ts);
            }
        }
        if let Some(ts) = split_t {
            exit = None;
            let mut pre = state;
            pre.t = ts;
            pre.sigma = sigma_at(ts);
            pre.phi = -a;
            let ell = path.ell(ts);
            let post = apply_jump(dw, &pre, EventKind::Splitting, ell, provider)?;
            record(dw, &mut samples, &mut events, EventKind::Splitting, pre, post, ell);
            state = post;
            s0_entry = None;
        } else if let Some(end) = exit {
            let (mut kind, _) = leg.exit_kind(end);
            if leg.config == Configuration::SZero && s0_entry != Some(end) {
                kind = EventKind::MergingContinuous;
            }
            let mut pre = state;
            pre.t = t_b;
            pre.sigma = leg.end_sigma(end);
            pre.phi = phi_b;
            let ell = path.ell(t_b);
            let post = apply_jump(dw, &pre, kind, ell, provider)?;
            s0_entry = if post.config == Configuration::SZero { Some(if pre.sigma > T::zero() { End::Hi } else { End::Lo }) } else { None };
            record(dw, &mut samples, &mut events, kind, pre, post, ell);
            state = post;
        } else {
            state.t = t_b;
            state.phi = phi_b.min(T::zero());
            let ell = path.ell(t_b);
            state.sigma = leg.solve(dw, ell).ok_or(LimitError::Unsolvable { t: t_b.as_f64(), ell: ell.as_f64(), config: state.config })?;
            samples.push(sample(dw, &state, ell));
        }
        if events.len() > opts.max_events {
            return Err(LimitError::EventCap(opts.max_events));
        }
    }
    Ok(LimitTrajectory { samples, events })
}

fn record<T: Real>(
    dw: &DoubleWell<T>,
    samples: &mut Vec<LimitSample<T>>,
    events: &mut Vec<EventRecord<T>>,
    kind: EventKind,
    pre: LimitState<T>,
    post: LimitState<T>,
    ell: T,
) {
    let (e0, e1) = (pre.energy(dw), post.energy(dw));
    samples.push(sample(dw, &pre, ell));
    samples.push(sample(dw, &post, ell));
    events.push(EventRecord { t: pre.t, kind, pre, post, d_sigma: post.sigma - pre.sigma, d_energy: e1 - e0 });
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NextEvent<T> {
    pub kind: EventKind,
    pub sigma: T,
    /// Time from the switching to the event.
    pub dt: T,
}

/// Next event after a switching into an unstable-stable leg `(X_0, X_+)`
/// with unstable mass `m1` (stable mass `1 - m1`) under constant `ell_dot > 0`.
///
/// `sigma` decreases from `sigma_*`; the first of discontinuous merging
/// (`Z = 0`), continuous merging (`sigma = -sigma_*`) and splitting
/// (`int_sigma^{sigma_*} Z / A_+ = a ell_dot`) is returned, with
/// `dt = (1/ell_dot) int_{sigma_ev}^{sigma_*} |Z / (A_0 A_+)|`.
pub fn next_event_constant_rate<T: Real>(dw: &DoubleWell<T>, m1: T, a: T, ell_dot: T) -> Result<NextEvent<T>, LimitError> {
    if !(ell_dot > T::zero()) {
        return Err(LimitError::InvalidState("ell_dot must be positive".into()));
    }
    let ss = dw.sigma_star();
    let m2 = T::one() - m1;
    let pair = |s: T| -> (T, T) {
        let x0 = dw.branch_inverse(Branch::Zero, s).unwrap_or(T::nan());
        let xp = dw.branch_inverse(Branch::Plus, s).unwrap_or(T::nan());
        (x0, xp)
    };
    let z_over_ap = |s: T| {
        let (x0, xp) = pair(s);
        z_function(dw, m1, x0, xp) / dw.d2(xp)
    };
    let fold = tangency(dw, m1)?;
    let s_low = fold.unwrap_or(-ss);
    let tol: T = c(1e-13);
    let split_integral = |s: T| tanh_sinh(z_over_ap, s, ss, tol);
    let target = a * ell_dot;
    let (kind, sigma) = if split_integral(s_low) >= target {
        let s = bisect(|s| split_integral(s) - target, s_low, ss, T::epsilon() * c(8.0)).unwrap_or(s_low);
        (EventKind::Splitting, s)
    } else if fold.is_some() {
        (EventKind::MergingDiscontinuous, s_low)
    } else {
        (EventKind::MergingContinuous, s_low)
    };
    let rate = |s: T| {
        let (x0, xp) = pair(s);
        let (a0, ap) = (dw.d2(x0), dw.d2(xp));
        (m1 / a0 + m2 / ap).abs()
    };
    let dt = tanh_sinh(rate, sigma, ss, tol) / ell_dot;
    Ok(NextEvent { kind, sigma, dt })
}

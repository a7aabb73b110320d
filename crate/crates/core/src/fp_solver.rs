//! Finite-volume solver for the constrained Fokker-Planck equation
//! `tau rho_t = (nu^2 rho_x + (H' - sigma) rho)_x` with `int x rho = ell(t)`.
//!
//! Fluxes are exponentially fitted (Scharfetter-Gummel / Chang-Cooper) using
//! the exact tilted-energy difference between neighbouring cells, so the
//! sampled Gibbs density is an exact discrete steady state. Time stepping is
//! a theta scheme (Crank-Nicolson by default) with one tridiagonal solve per
//! Newton iteration; the multiplier `sigma` of each step is chosen so that
//! the discrete moment hits `ell(t + dt)`.

use serde::Serialize;
use thiserror::Error;

use crate::path::ConstraintPath;
use crate::potential::DoubleWell;
use crate::scalar::{c, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpError {
    #[error("initial peak at {0} is not in a convex region of H")]
    NonconvexInit(f64),
    #[error("grid spacing {dx} too coarse for nu = {nu}")]
    GridTooCoarse { dx: f64, nu: f64 },
    #[error("time step {dt} exceeds the positivity bound {bound}")]
    Cfl { dt: f64, bound: f64 },
    #[error("no multiplier satisfies the constraint ell = {0}")]
    ConstraintUnsolvable(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Uniform cell-centred grid on `[x_lo, x_hi]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid<T> {
    pub x_lo: T,
    pub x_hi: T,
    pub n: usize,
    pub dx: T,
}

impl<T: Real> Grid<T> {
    pub fn new(x_lo: T, x_hi: T, n: usize) -> Self {
        Self { x_lo, x_hi, n, dx: (x_hi - x_lo) / T::count(n) }
    }

    /// Symmetric grid `[-L, L]` with `L = x_** + 4 max(1, 8 nu)` and spacing
    /// at most `dx` (default `nu / 4`), at least 512 cells, even cell count.
    pub fn for_well(dw: &DoubleWell<T>, nu: T, dx: Option<T>) -> Result<Self, FpError> {
        let dx = dx.unwrap_or(nu / c(4.0));
        if !(dx > T::zero()) || !(nu > T::zero()) {
            return Err(FpError::InvalidParameter("dx and nu must be positive".into()));
        }
        if dx > nu / c(2.0) {
            return Err(FpError::GridTooCoarse { dx: dx.as_f64(), nu: nu.as_f64() });
        }
        let half = dw.x_star_star() + c::<T>(4.0) * T::one().max(c::<T>(8.0) * nu);
        let mut n = (half * c(2.0) / dx).ceil().to_usize().unwrap_or(512).max(512);
        n += n % 2;
        Ok(Self::new(-half, half, n))
    }

    /// Centre of cell `i`; exactly antisymmetric on symmetric grids.
    #[inline]
    pub fn x(&self, i: usize) -> T {
        let mid = (self.x_lo + self.x_hi) / c(2.0);
        let k = T::from_i64(2 * i as i64 + 1 - self.n as i64).unwrap();
        mid + k * (self.dx / c(2.0))
    }

    pub fn centers(&self) -> Vec<T> {
        (0..self.n).map(|i| self.x(i)).collect()
    }
}

/// Model parameters of the Fokker-Planck equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FpParams<T> {
    pub tau: T,
    pub nu: T,
    /// Implicitness of the theta scheme (1/2 is Crank-Nicolson, 1 is backward Euler).
    pub theta: T,
}

impl<T: Real> FpParams<T> {
    pub fn new(tau: T, nu: T) -> Self {
        Self { tau, nu, theta: c(0.5) }
    }
}

/// Density on a grid together with the current time and multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField<T> {
    pub grid: Grid<T>,
    pub rho: Vec<T>,
    pub t: T,
    pub sigma: T,
}

/// Point mass moving with `tau x' = sigma - H'(x)`, coupled to a grid density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PointPeak<T> {
    pub mass: T,
    pub x: T,
}

/// Macroscopic observables of a density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Observables<T> {
    pub t: T,
    pub ell: T,
    pub sigma: T,
    /// `int H' rho`.
    pub y: T,
    pub m_minus: T,
    pub m_plus: T,
    /// Free energy `int H rho + nu^2 int rho ln rho`.
    pub energy: T,
    /// Entropy `-nu^2 int rho ln rho`.
    pub entropy: T,
    pub dissipation: T,
    /// Standard deviation of the density.
    pub width: T,
    pub mass: T,
}

/// Bernoulli function `z / (e^z - 1)`.
#[inline]
pub fn bernoulli<T: Real>(z: T) -> T {
    if z.abs() < c(1e-6) {
        T::one() - z / c(2.0) + z * z / c(12.0)
    } else if z > T::zero() {
        let e = (-z).exp();
        z * e / (-(-z).exp_m1())
    } else {
        z / z.exp_m1()
    }
}

/// Derivative of [`bernoulli`].
#[inline]
pub fn bernoulli_prime<T: Real>(z: T) -> T {
    if z.abs() < c(1e-4) {
        -c::<T>(0.5) + z / c(6.0) - z * z * z / c(180.0)
    } else {
        let b = bernoulli(z);
        b * (T::one() - bernoulli(-z)) / z
    }
}

/// Normalized Gaussian `(1/nu) sqrt(alpha/2pi) exp(-alpha (x-ell0)^2 / (2 nu^2))`
/// with `alpha = H''(ell0)`, sampled at cell centres and renormalized to unit
/// discrete mass.
pub fn gaussian_initial<T: Real>(dw: &DoubleWell<T>, grid: &Grid<T>, nu: T, ell0: T) -> Result<DensityField<T>, FpError> {
    let alpha = dw.d2(ell0);
    if !(alpha > T::zero()) {
        return Err(FpError::NonconvexInit(ell0.as_f64()));
    }
    let mut rho: Vec<T> = (0..grid.n)
        .map(|i| {
            let d = grid.x(i) - ell0;
            (-(alpha * d * d) / (c::<T>(2.0) * nu * nu)).exp()
        })
        .collect();
    normalize(&mut rho, grid.dx, T::one());
    let y = (0..grid.n).map(|i| dw.d1(grid.x(i)) * rho[i]).sum::<T>() * grid.dx;
    Ok(DensityField { grid: grid.clone(), rho, t: T::zero(), sigma: y })
}

/// Sampled Gibbs density `exp(-(H(x) - sigma x)/nu^2)` with unit discrete mass.
pub fn equilibrium<T: Real>(dw: &DoubleWell<T>, grid: &Grid<T>, nu: T, sigma: T) -> Vec<T> {
    let hs: Vec<T> = (0..grid.n).map(|i| dw.h_sigma(sigma, grid.x(i))).collect();
    let m = hs.iter().copied().fold(T::infinity(), T::min);
    let mut rho: Vec<T> = hs.iter().map(|&h| (-(h - m) / (nu * nu)).exp()).collect();
    normalize(&mut rho, grid.dx, T::one());
    rho
}

fn normalize<T: Real>(rho: &mut [T], dx: T, mass: T) {
    let s = rho.iter().copied().sum::<T>() * dx;
    for r in rho.iter_mut() {
        *r = *r * mass / s;
    }
}

/// The continuous multiplier `sigma = int H' rho + tau ell'` for a given density.
pub fn multiplier<T: Real>(dw: &DoubleWell<T>, field: &DensityField<T>, tau: T, ell_dot: T) -> T {
    let g = &field.grid;
    (0..g.n).map(|i| dw.d1(g.x(i)) * field.rho[i]).sum::<T>() * g.dx + tau * ell_dot
}

/// Per-step diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo<T> {
    pub dt: T,
    pub sigma: T,
    pub newton_iterations: usize,
    /// `E(n+1) - E(n) + dt D(mid) - sigma (ell(n+1) - ell(n))`.
    pub balance_residual: T,
}

/// Fokker-Planck solver on a fixed grid.
pub struct FpSolver<T: Real> {
    dw: DoubleWell<T>,
    pub params: FpParams<T>,
    pub grid: Grid<T>,
    x: Vec<T>,
    h: Vec<T>,
    // work buffers
    bp: Vec<T>,
    bm: Vec<T>,
    dbp: Vec<T>,
    dbm: Vec<T>,
    rhs: Vec<T>,
    sol: Vec<T>,
    dsol: Vec<T>,
    cprime: Vec<T>,
    dprime: Vec<T>,
    lo: Vec<T>,
    di: Vec<T>,
    up: Vec<T>,
}

impl<T: Real> FpSolver<T> {
    pub fn new(dw: DoubleWell<T>, params: FpParams<T>, grid: Grid<T>) -> Result<Self, FpError> {
        if !(params.tau > T::zero()) || !(params.nu > T::zero()) {
            return Err(FpError::InvalidParameter("tau and nu must be positive".into()));
        }
        if !(params.theta >= c(0.5) && params.theta <= T::one()) {
            return Err(FpError::InvalidParameter("theta must lie in [1/2, 1]".into()));
        }
        if grid.dx > params.nu / c(2.0) {
            return Err(FpError::GridTooCoarse { dx: grid.dx.as_f64(), nu: params.nu.as_f64() });
        }
        let n = grid.n;
        let x = grid.centers();
        let h = x.iter().map(|&v| dw.h(v)).collect();
        let z = || vec![T::zero(); n];
        Ok(Self {
            dw,
            params,
            grid,
            x,
            h,
            bp: z(),
            bm: z(),
            dbp: z(),
            dbm: z(),
            rhs: z(),
            sol: z(),
            dsol: z(),
            cprime: z(),
            dprime: z(),
            lo: z(),
            di: z(),
            up: z(),
        })
    }

    pub fn well(&self) -> &DoubleWell<T> {
        &self.dw
    }

    /// Face Peclet numbers `z_{i+1/2} = (H_sigma(x_{i+1}) - H_sigma(x_i)) / nu^2`.
    #[inline]
    fn z(&self, i: usize, sigma: T) -> T {
        let nu2 = self.params.nu * self.params.nu;
        (self.h[i + 1] - self.h[i] - sigma * self.grid.dx) / nu2
    }

    fn set_coefficients(&mut self, sigma: T) {
        for i in 0..self.grid.n - 1 {
            let z = self.z(i, sigma);
            self.bp[i] = bernoulli(z);
            self.bm[i] = bernoulli(-z);
            self.dbp[i] = bernoulli_prime(z);
            self.dbm[i] = bernoulli_prime(-z);
        }
    }

    /// Largest step keeping the explicit part of the theta scheme
    /// positivity preserving on cells carrying non-negligible mass.
    pub fn max_stable_dt(&self, rho: &[T], sigma: T) -> T {
        let p = &self.params;
        if p.theta >= T::one() {
            return T::infinity();
        }
        let n = self.grid.n;
        let rmax = rho.iter().copied().fold(T::zero(), T::max);
        let floor = rmax * c(1e-20);
        let k0 = p.nu * p.nu / (self.grid.dx * self.grid.dx);
        let mut worst = T::zero();
        for i in 0..n {
            if rho[i] <= floor {
                continue;
            }
            let mut s = T::zero();
            if i + 1 < n {
                s = s + bernoulli(self.z(i, sigma));
            }
            if i > 0 {
                s = s + bernoulli(-self.z(i - 1, sigma));
            }
            worst = worst.max(s);
        }
        if worst == T::zero() {
            return T::infinity();
        }
        p.tau / ((T::one() - p.theta) * k0 * worst)
    }

    /// One theta step for fixed `sigma`; the result is left in `self.sol`,
    /// and `self.dsol` holds `d sol / d sigma`.
    fn trial(&mut self, rho: &[T], dt: T, sigma: T) {
        let n = self.grid.n;
        self.set_coefficients(sigma);
        let p = self.params;
        let k = dt * p.nu * p.nu / (p.tau * self.grid.dx * self.grid.dx);
        let th = p.theta;
        let ex = T::one() - th;
        for i in 0..n {
            let mut out = T::zero(); // (L rho)_i * dx^2 / nu^2
            let mut d = T::zero();
            if i + 1 < n {
                out = out + self.bm[i] * rho[i + 1] - self.bp[i] * rho[i];
                d = d + self.bp[i];
                self.up[i] = -th * k * self.bm[i];
            } else {
                self.up[i] = T::zero();
            }
            if i > 0 {
                out = out - (self.bm[i - 1] * rho[i] - self.bp[i - 1] * rho[i - 1]);
                d = d + self.bm[i - 1];
                self.lo[i] = -th * k * self.bp[i - 1];
            } else {
                self.lo[i] = T::zero();
            }
            self.di[i] = T::one() + th * k * d;
            self.rhs[i] = rho[i] + ex * k * out;
        }
        thomas(&self.lo, &self.di, &self.up, &self.rhs, &mut self.sol, &mut self.cprime, &mut self.dprime);
        // sensitivity: A dsol = (dt/tau) L' (theta sol + (1-theta) rho)
        let scale = dt / (p.tau * self.grid.dx);
        let mut prev_flux = T::zero();
        for i in 0..n {
            let f = if i + 1 < n {
                let a = th * self.sol[i + 1] + ex * rho[i + 1];
                let b = th * self.sol[i] + ex * rho[i];
                self.dbm[i] * a + self.dbp[i] * b
            } else {
                T::zero()
            };
            self.rhs[i] = scale * (f - prev_flux);
            prev_flux = f;
        }
        let (lo, di, up) = (&self.lo, &self.di, &self.up);
        thomas(lo, di, up, &self.rhs, &mut self.dsol, &mut self.cprime, &mut self.dprime);
    }

    fn moment(&self, v: &[T]) -> T {
        self.x.iter().zip(v).map(|(&x, &r)| x * r).sum::<T>() * self.grid.dx
    }

    /// Advances `field` (and optionally a coupled point peak) by `dt` so that
    /// `moment(rho) + m2 x2 = ell_target` holds after the step.
    pub fn step_coupled(
        &mut self,
        field: &mut DensityField<T>,
        mut point: Option<&mut PointPeak<T>>,
        dt: T,
        ell_target: T,
        check_cfl: bool,
    ) -> Result<StepInfo<T>, FpError> {
        if check_cfl {
            let bound = self.max_stable_dt(&field.rho, field.sigma);
            if dt > bound * c(1.000_001) {
                return Err(FpError::Cfl { dt: dt.as_f64(), bound: bound.as_f64() });
            }
        }
        let p = self.params;
        let h = dt / p.tau;
        let pt = point.as_deref().copied();
        let dw = self.dw.clone();
        let point_update = |sigma: T| -> (T, T) {
            match pt {
                None => (T::zero(), T::zero()),
                Some(q) => {
                    let denom = T::one() + p.theta * h * dw.d2(q.x);
                    let x = q.x + h * (sigma - dw.d1(q.x)) / denom;
                    (q.mass * x, q.mass * h / denom)
                }
            }
        };
        let rho0 = field.rho.clone();
        let e0 = self.energy(&rho0) + pt.map_or(T::zero(), |q| q.mass * self.dw.h(q.x));
        let ell0 = self.moment(&rho0) + pt.map_or(T::zero(), |q| q.mass * q.x);

        let tol = c::<T>(1e-14) * (T::one() + ell_target.abs());
        let mut sigma = field.sigma;
        let mut iters = 0;
        let mut converged = false;
        // bracket maintained for safeguarding: F(lo) < 0 < F(hi)
        let mut lo = T::neg_infinity();
        let mut hi = T::infinity();
        for it in 0..80 {
            iters = it + 1;
            self.trial(&rho0, dt, sigma);
            let (pm, dpm) = point_update(sigma);
            let f = self.moment(&self.sol) + pm - ell_target;
            let df = self.moment(&self.dsol) + dpm;
            if f.abs() <= tol {
                converged = true;
                break;
            }
            if f < T::zero() {
                lo = lo.max(sigma);
            } else {
                hi = hi.min(sigma);
            }
            let mut next = if df > T::zero() && df.is_finite() { sigma - f / df } else { T::nan() };
            if !(next > lo && next < hi) || !next.is_finite() {
                next = if lo.is_finite() && hi.is_finite() {
                    (lo + hi) / c(2.0)
                } else if lo.is_finite() {
                    lo + (lo.abs() + T::one())
                } else {
                    hi - (hi.abs() + T::one())
                };
            }
            if (next - sigma).abs() <= T::epsilon() * c::<T>(4.0) * (T::one() + sigma.abs()) {
                sigma = next;
                self.trial(&rho0, dt, sigma);
                converged = (self.moment(&self.sol) + point_update(sigma).0 - ell_target).abs() <= tol * c(1e3);
                break;
            }
            sigma = next;
        }
        if !converged {
            return Err(FpError::ConstraintUnsolvable(ell_target.as_f64()));
        }
        std::mem::swap(&mut field.rho, &mut self.sol);
        field.t = field.t + dt;
        field.sigma = sigma;
        if let (Some(q), Some(q0)) = (point.as_deref_mut(), pt) {
            let denom = T::one() + p.theta * h * self.dw.d2(q0.x);
            q.x = q0.x + h * (sigma - self.dw.d1(q0.x)) / denom;
        }
        // energy balance on the step, with dissipation at the midpoint density
        let mid: Vec<T> = rho0.iter().zip(&field.rho).map(|(&a, &b)| (a + b) / c(2.0)).collect();
        let mut d_mid = self.dissipation(&mid, sigma);
        let mut e1 = self.energy(&field.rho);
        let mut ell1 = self.moment(&field.rho);
        if let (Some(q), Some(q0)) = (point.as_deref(), pt) {
            let xm = (q.x + q0.x) / c(2.0);
            let v = sigma - self.dw.d1(xm);
            d_mid = d_mid + q.mass * v * v / p.tau;
            e1 = e1 + q.mass * self.dw.h(q.x);
            ell1 = ell1 + q.mass * q.x;
        }
        let residual = e1 - e0 + dt * d_mid - sigma * (ell1 - ell0);
        Ok(StepInfo { dt, sigma, newton_iterations: iters, balance_residual: residual })
    }

    pub fn step(&mut self, field: &mut DensityField<T>, dt: T, ell_target: T) -> Result<StepInfo<T>, FpError> {
        self.step_coupled(field, None, dt, ell_target, true)
    }

    /// Free energy `sum (H rho + nu^2 rho ln rho) dx` with `0 ln 0 = 0`.
    pub fn energy(&self, rho: &[T]) -> T {
        let nu2 = self.params.nu * self.params.nu;
        self.h.iter().zip(rho).map(|(&h, &r)| h * r + nu2 * xlogx(r)).sum::<T>() * self.grid.dx
    }

    /// Discrete dissipation `(1/tau) sum J (mu_{i+1} - mu_i - sigma dx)`,
    /// non-negative by construction of the fitted flux.
    pub fn dissipation(&mut self, rho: &[T], sigma: T) -> T {
        let p = self.params;
        let nu2 = p.nu * p.nu;
        let tiny = T::min_positive_value();
        let mut s = T::zero();
        for i in 0..self.grid.n - 1 {
            let z = self.z(i, sigma);
            let a = z.exp() * rho[i + 1].max(T::zero());
            let b = rho[i].max(T::zero());
            if a == b {
                continue;
            }
            let la = if a.is_finite() { a.max(tiny).ln() } else { z + rho[i + 1].max(tiny).ln() };
            let lb = b.max(tiny).ln();
            // J = (nu^2/dx) B(z) (e^z rho_{i+1} - rho_i), written to avoid overflow of e^z
            let j = nu2 / self.grid.dx * (bernoulli(-z) * rho[i + 1].max(T::zero()) - bernoulli(z) * b);
            s = s + j * nu2 * (la - lb);
        }
        s.max(T::zero()) / p.tau
    }

    pub fn observables(&mut self, field: &DensityField<T>, ell: T) -> Observables<T> {
        let g = &field.grid;
        let dx = g.dx;
        let nu2 = self.params.nu * self.params.nu;
        let rho = &field.rho;
        let mass = rho.iter().copied().sum::<T>() * dx;
        let mean = self.moment(rho) / mass;
        let mut m_minus = T::zero();
        let mut m_plus = T::zero();
        let mut var = T::zero();
        let mut y = T::zero();
        let mut ent = T::zero();
        for i in 0..g.n {
            let x = self.x[i];
            let r = rho[i];
            if x < T::zero() {
                m_minus = m_minus + r;
            } else if x > T::zero() {
                m_plus = m_plus + r;
            } else {
                m_minus = m_minus + r / c(2.0);
                m_plus = m_plus + r / c(2.0);
            }
            var = var + (x - mean) * (x - mean) * r;
            y = y + self.dw.d1(x) * r;
            ent = ent + xlogx(r);
        }
        Observables {
            t: field.t,
            ell,
            sigma: field.sigma,
            y: y * dx,
            m_minus: m_minus * dx,
            m_plus: m_plus * dx,
            energy: self.energy(rho),
            entropy: -nu2 * ent * dx,
            dissipation: self.dissipation(rho, field.sigma),
            width: (var * dx / mass).max(T::zero()).sqrt(),
            mass,
        }
    }
}

#[inline]
fn xlogx<T: Real>(r: T) -> T {
    if r > T::zero() {
        r * r.ln()
    } else {
        T::zero()
    }
}

/// Thomas algorithm; exact non-negativity is preserved for M-matrices.
fn thomas<T: Real>(lo: &[T], di: &[T], up: &[T], rhs: &[T], out: &mut [T], cp: &mut [T], dp: &mut [T]) {
    let n = di.len();
    cp[0] = up[0] / di[0];
    dp[0] = rhs[0] / di[0];
    for i in 1..n {
        let m = di[i] - lo[i] * cp[i - 1];
        cp[i] = up[i] / m;
        dp[i] = (rhs[i] - lo[i] * dp[i - 1]) / m;
    }
    out[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = dp[i] - cp[i] * out[i + 1];
    }
}

/// Output selection for [`run`].
#[derive(Clone, Debug)]
pub struct RunOptions<T> {
    /// Upper bound on the time step; the positivity bound may shorten it.
    pub dt_max: T,
    /// Interval between recorded observables.
    pub cadence: T,
    /// Times at which full density snapshots are kept.
    pub snapshot_times: Vec<T>,
}

/// Worst-case invariant violations observed over a run.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct RunDiagnostics<T> {
    pub max_mass_error: T,
    pub max_moment_error: T,
    pub min_density: T,
    /// Time integral of `|E' + D - sigma ell'|` (sum of per-step residuals).
    pub balance_audit: T,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct FpRun<T> {
    pub series: Vec<Observables<T>>,
    pub snapshots: Vec<(T, Vec<T>)>,
    pub diagnostics: RunDiagnostics<T>,
    pub final_field: DensityField<T>,
    /// Point-peak trajectory `(t, x2)` for coupled runs.
    pub point_track: Vec<(T, T)>,
}

/// Integrates from `field.t` to `t_end` along `path`.
pub fn run<T: Real>(
    solver: &mut FpSolver<T>,
    field: DensityField<T>,
    path: &dyn ConstraintPath<T>,
    t_end: T,
    opts: &RunOptions<T>,
) -> Result<FpRun<T>, FpError> {
    run_inner(solver, field, None, path, t_end, opts)
}

/// Coupled grid-density / point-peak run: the grid carries mass `1 - point.mass`.
pub fn pwm_run<T: Real>(
    solver: &mut FpSolver<T>,
    field: DensityField<T>,
    point: PointPeak<T>,
    path: &dyn ConstraintPath<T>,
    t_end: T,
    opts: &RunOptions<T>,
) -> Result<FpRun<T>, FpError> {
    if !(point.mass >= T::zero() && point.mass < T::one()) {
        return Err(FpError::InvalidParameter("point mass must lie in [0, 1)".into()));
    }
    run_inner(solver, field, Some(point), path, t_end, opts)
}

fn run_inner<T: Real>(
    solver: &mut FpSolver<T>,
    mut field: DensityField<T>,
    mut point: Option<PointPeak<T>>,
    path: &dyn ConstraintPath<T>,
    t_end: T,
    opts: &RunOptions<T>,
) -> Result<FpRun<T>, FpError> {
    if !(opts.dt_max > T::zero()) || !(opts.cadence > T::zero()) {
        return Err(FpError::InvalidParameter("dt_max and cadence must be positive".into()));
    }
    let dx = field.grid.dx;
    let grid_mass = field.rho.iter().copied().sum::<T>() * dx;
    let mut diag = RunDiagnostics { min_density: T::infinity(), ..Default::default() };
    let mut series = Vec::new();
    let mut snapshots = Vec::new();
    let mut point_track = Vec::new();
    let mut snaps: Vec<T> = opts.snapshot_times.clone();
    snaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut next_snap = 0;
    let eps_t = opts.dt_max * c(1e-9);
    let record = |solver: &mut FpSolver<T>, f: &DensityField<T>, series: &mut Vec<Observables<T>>| {
        series.push(solver.observables(f, path.ell(f.t)));
    };
    let tau = solver.params.tau;
    let pm = point.map_or(T::zero(), |q| q.mass * solver.dw.d1(q.x));
    field.sigma = multiplier(&solver.dw, &field, tau, path.ell_dot(field.t)) + pm;
    record(solver, &field, &mut series);
    if let Some(q) = point {
        point_track.push((field.t, q.x));
    }
    while next_snap < snaps.len() && snaps[next_snap] <= field.t + eps_t {
        snapshots.push((field.t, field.rho.clone()));
        next_snap += 1;
    }
    let mut next_out = field.t + opts.cadence;
    while field.t < t_end - eps_t {
        let mut target = next_out.min(t_end);
        if next_snap < snaps.len() {
            target = target.min(snaps[next_snap]);
        }
        let bound = solver.max_stable_dt(&field.rho, field.sigma);
        let mut dt = opts.dt_max.min(bound * c(0.9));
        if field.t + dt >= target - eps_t {
            dt = target - field.t;
        }
        let ell_next = path.ell(field.t + dt);
        let info = solver.step_coupled(&mut field, point.as_mut(), dt, ell_next, false)?;
        diag.steps += 1;
        diag.balance_audit = diag.balance_audit + info.balance_residual.abs();
        let mass = field.rho.iter().copied().sum::<T>() * dx;
        let mom = solver.moment(&field.rho) + point.map_or(T::zero(), |q| q.mass * q.x);
        diag.max_mass_error = diag.max_mass_error.max((mass - grid_mass).abs());
        diag.max_moment_error = diag.max_moment_error.max((mom - ell_next).abs());
        diag.min_density = field.rho.iter().copied().fold(diag.min_density, T::min);
        if (field.t - target).abs() <= eps_t {
            field.t = target;
            if (target - next_out).abs() <= eps_t || (target - t_end).abs() <= eps_t {
                record(solver, &field, &mut series);
                if let Some(q) = point {
                    point_track.push((field.t, q.x));
                }
                next_out = next_out + opts.cadence;
            }
            while next_snap < snaps.len() && snaps[next_snap] <= field.t + eps_t {
                snapshots.push((field.t, field.rho.clone()));
                next_snap += 1;
            }
        }
    }
    Ok(FpRun { series, snapshots, diagnostics: diag, final_field: field, point_track })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_identities() {
        for &z in &[-40.0, -3.0, -1e-3, 0.0, 1e-7, 0.4, 5.0, 800.0] {
            let lhs: f64 = bernoulli(-z);
            assert!((lhs - (bernoulli(z) + z)).abs() < 1e-12 * (1.0 + z.abs()), "z = {z}");
        }
        for &z in &[-3.0, -1e-5, 1e-5, 0.3, 2.0] {
            let fd = (bernoulli(z + 1e-7) - bernoulli(z - 1e-7)) / 2e-7;
            assert!((fd - bernoulli_prime::<f64>(z)).abs() < 1e-7, "z = {z}");
        }
    }

    #[test]
    fn grid_is_antisymmetric() {
        let g = Grid::new(-3.0, 3.0, 600);
        for i in 0..600 {
            assert_eq!(g.x(i), -g.x(599 - i));
        }
    }
}

//! Mass-splitting problem: an unstable peak, resolved by `N` transport
//! characteristics, splits under the constraint while a stable point peak
//! absorbs part of its mass.

use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erf_inv;
use thiserror::Error;

use crate::potential::{Branch, DoubleWell, PotentialError};
use crate::scalar::{c, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("mass m1 = {0} outside (0, 1]")]
    InvalidMass(f64),
    #[error("need at least two characteristics, got {0}")]
    TooFewCharacteristics(usize),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("not converged at s = {s}: residual {residual:e}")]
    NotConverged { s: f64, residual: f64 },
}

/// Symmetric Gaussian quantiles `erfinv(2(n - 1/2)/N - 1)`, `n = 1..=N`.
pub fn gaussian_quantiles(n: usize) -> Vec<f64> {
    let mut q = vec![0.0; n];
    for k in 0..n / 2 {
        let level = (2.0 * k as f64 + 1.0) / n as f64 - 1.0;
        let v = erf_inv(level);
        q[k] = v;
        q[n - 1 - k] = -v;
    }
    q
}

#[derive(Clone, Debug)]
pub struct CharacteristicEnsemble<T> {
    /// Characteristic positions, sorted ascending.
    pub xi: Vec<T>,
    pub x2: T,
    pub m1: T,
    pub m2: T,
    pub s: T,
    pub ell: T,
}

impl<T: Real> CharacteristicEnsemble<T> {
    pub fn constraint(&self) -> T {
        let n = T::count(self.xi.len());
        self.m1 / n * self.xi.iter().copied().sum::<T>() + self.m2 * self.x2
    }

    pub fn sigma(&self, dw: &DoubleWell<T>) -> T {
        let n = T::count(self.xi.len());
        self.m1 / n * self.xi.iter().map(|&x| dw.d1(x)).sum::<T>() + self.m2 * dw.d1(self.x2)
    }

    pub fn energy(&self, dw: &DoubleWell<T>) -> T {
        let n = T::count(self.xi.len());
        self.m1 / n * self.xi.iter().map(|&x| dw.h(x)).sum::<T>() + self.m2 * dw.h(self.x2)
    }

    /// Largest speed `|sigma - H'(x)|` over characteristics and the point peak.
    pub fn residual(&self, dw: &DoubleWell<T>) -> T {
        let sigma = self.sigma(dw);
        self.xi.iter().map(|&x| (sigma - dw.d1(x)).abs()).fold((sigma - dw.d1(self.x2)).abs(), T::max)
    }
}

/// Ensemble at `x~1 = X_0(sigma~)` with the point peak at `X_+(sigma~)`.
pub fn init_ensemble<T: Real>(
    dw: &DoubleWell<T>,
    m1: T,
    sigma_tilde: T,
    n: usize,
    eps: T,
) -> Result<CharacteristicEnsemble<T>, SplitError> {
    init_ensemble_on(dw, m1, sigma_tilde, n, eps, Branch::Plus)
}

/// As [`init_ensemble`] with the point peak on the stable branch `stable`.
pub fn init_ensemble_on<T: Real>(
    dw: &DoubleWell<T>,
    m1: T,
    sigma_tilde: T,
    n: usize,
    eps: T,
    stable: Branch,
) -> Result<CharacteristicEnsemble<T>, SplitError> {
    if !(m1 > T::zero() && m1 <= T::one()) {
        return Err(SplitError::InvalidMass(m1.as_f64()));
    }
    if n < 2 {
        return Err(SplitError::TooFewCharacteristics(n));
    }
    let x1 = dw.branch_inverse(Branch::Zero, sigma_tilde)?;
    let x2 = dw.branch_inverse(stable, sigma_tilde)?;
    let m2 = T::one() - m1;
    let xi: Vec<T> = gaussian_quantiles(n).into_iter().map(|q| x1 + eps * c(q)).collect();
    let mut ens = CharacteristicEnsemble { xi, x2, m1, m2, s: T::zero(), ell: T::zero() };
    ens.ell = m1 * x1 + m2 * x2;
    Ok(ens)
}

/// One explicit Euler step of size `ds`.
pub fn msm_step<T: Real>(ens: &mut CharacteristicEnsemble<T>, dw: &DoubleWell<T>, ds: T) {
    let sigma = ens.sigma(dw);
    for x in ens.xi.iter_mut() {
        *x = *x + ds * (sigma - dw.d1(*x));
    }
    ens.x2 = ens.x2 + ds * (sigma - dw.d1(ens.x2));
    ens.s = ens.s + ds;
}

#[derive(Clone, Copy, Debug)]
pub struct SplitOptions<T> {
    pub n: usize,
    pub eps: T,
    pub ds: T,
    pub s_max: T,
    /// Speed threshold for convergence.
    pub tol: T,
    /// Stable branch carrying the point peak.
    pub stable: Branch,
    /// Also run at `ds / 2` and report the change in `m12`.
    pub richardson: bool,
}

impl<T: Real> SplitOptions<T> {
    /// Defaults with `eps = 1e-3 x_*`.
    pub fn for_well(dw: &DoubleWell<T>) -> Self {
        Self { n: 2000, eps: dw.x_star() * c(1e-3), ds: c(1e-3), s_max: c(200.0), tol: c(1e-8), stable: Branch::Plus, richardson: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MassSplitResult<T> {
    /// Mass of the characteristics ending right of `X_0(sigma_hat)`.
    pub m12: T,
    pub x_hat1: T,
    pub x_hat2: T,
    pub sigma_hat: T,
    /// Number of characteristics ending at `x_hat1`.
    pub n12: usize,
    pub ell: T,
    /// `|ell(s_end) - ell(0)|`.
    pub ell_drift: T,
    pub s_end: T,
    /// Largest change in energy over a step (non-positive for a dissipative run).
    pub max_energy_increase: T,
    /// `|m12(ds) - m12(ds/2)|` when requested.
    pub richardson_gap: Option<T>,
}

fn split_once<T: Real>(dw: &DoubleWell<T>, m1: T, sigma_tilde: T, opts: &SplitOptions<T>, ds: T) -> Result<MassSplitResult<T>, SplitError> {
    let mut ens = init_ensemble_on(dw, m1, sigma_tilde, opts.n, opts.eps, opts.stable)?;
    let ell0 = ens.constraint();
    let xs = dw.x_star();
    let check_every = 64;
    let mut energy = ens.energy(dw);
    let mut max_increase = T::neg_infinity();
    let mut step = 0usize;
    loop {
        if step % check_every == 0 {
            let settled = ens.x2.abs() >= xs && ens.xi.iter().all(|x| x.abs() >= xs);
            let residual = ens.residual(dw);
            if settled && residual < opts.tol {
                break;
            }
            if ens.s >= opts.s_max {
                return Err(SplitError::NotConverged { s: ens.s.as_f64(), residual: residual.as_f64() });
            }
        }
        msm_step(&mut ens, dw, ds);
        let e = ens.energy(dw);
        max_increase = max_increase.max(e - energy);
        energy = e;
        step += 1;
    }
    let sigma_hat = ens.sigma(dw);
    let cut = dw.branch_inverse(Branch::Zero, sigma_hat)?;
    let nf = T::count(ens.xi.len());
    let w = m1 / nf;
    let (mut left_m, mut left_mx, mut right_m, mut right_mx) = (T::zero(), T::zero(), T::zero(), T::zero());
    let mut n_left = 0usize;
    for &x in &ens.xi {
        if x > cut {
            right_m = right_m + w;
            right_mx = right_mx + w * x;
        } else {
            n_left += 1;
            left_m = left_m + w;
            left_mx = left_mx + w * x;
        }
    }
    if ens.m2 > T::zero() {
        if ens.x2 > cut {
            right_m = right_m + ens.m2;
            right_mx = right_mx + ens.m2 * ens.x2;
        } else {
            left_m = left_m + ens.m2;
            left_mx = left_mx + ens.m2 * ens.x2;
        }
    }
    let x_hat1 = if left_m > T::zero() { left_mx / left_m } else { dw.branch_inverse(Branch::Minus, sigma_hat)? };
    let x_hat2 = if right_m > T::zero() { right_mx / right_m } else { dw.branch_inverse(Branch::Plus, sigma_hat)? };
    Ok(MassSplitResult {
        m12: m1 * T::count(ens.xi.len() - n_left) / nf,
        x_hat1,
        x_hat2,
        sigma_hat,
        n12: n_left,
        ell: ell0,
        ell_drift: (ens.constraint() - ell0).abs(),
        s_end: ens.s,
        max_energy_increase: max_increase,
        richardson_gap: None,
    })
}

/// Integrates the ensemble to rest and classifies the characteristics.
pub fn run_split<T: Real>(dw: &DoubleWell<T>, m1: T, sigma_tilde: T, opts: &SplitOptions<T>) -> Result<MassSplitResult<T>, SplitError> {
    let mut res = split_once(dw, m1, sigma_tilde, opts, opts.ds)?;
    if opts.richardson {
        let half = split_once(dw, m1, sigma_tilde, opts, opts.ds * c(0.5))?;
        res.richardson_gap = Some((res.m12 - half.m12).abs());
    }
    Ok(res)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MCell<T> {
    pub m1: T,
    pub sigma_tilde: T,
    pub m12: T,
    pub x_hat1: T,
    pub x_hat2: T,
    pub sigma_hat: T,
    pub converged: bool,
}

/// Tabulated mass-transfer function on a rectangular `(m1, sigma~)` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MTable<T> {
    pub m1: Vec<T>,
    pub sigma: Vec<T>,
    /// Row-major in `m1`.
    pub cells: Vec<MCell<T>>,
}

/// One `run_split` per grid cell, in parallel. Failed cells carry NaN values.
pub fn tabulate_m<T: Real>(dw: &DoubleWell<T>, m1_grid: &[T], sigma_grid: &[T], opts: &SplitOptions<T>) -> MTable<T> {
    let cells = m1_grid
        .iter()
        .flat_map(|&m| sigma_grid.iter().map(move |&s| (m, s)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(m1, s)| match run_split(dw, m1, s, opts) {
            Ok(r) => MCell { m1, sigma_tilde: s, m12: r.m12, x_hat1: r.x_hat1, x_hat2: r.x_hat2, sigma_hat: r.sigma_hat, converged: true },
            Err(_) => {
                let nan = T::nan();
                MCell { m1, sigma_tilde: s, m12: nan, x_hat1: nan, x_hat2: nan, sigma_hat: nan, converged: false }
            }
        })
        .collect();
    MTable { m1: m1_grid.to_vec(), sigma: sigma_grid.to_vec(), cells }
}

pub const M_TABLE_HEADER: &str = "m1,sigma_tilde,m12,x_hat1,x_hat2,sigma_hat,converged";

impl<T: Real> MTable<T> {
    pub fn cell(&self, i: usize, j: usize) -> &MCell<T> {
        &self.cells[i * self.sigma.len() + j]
    }

    /// Bilinear interpolation of `m12`; `None` outside the grid or next to a failed cell.
    pub fn interpolate(&self, m1: T, sigma: T) -> Option<T> {
        let (i, u) = locate(&self.m1, m1)?;
        let (j, v) = locate(&self.sigma, sigma)?;
        let i1 = (i + 1).min(self.m1.len() - 1);
        let j1 = (j + 1).min(self.sigma.len() - 1);
        let f = |a: usize, b: usize| self.cell(a, b).m12;
        let one = T::one();
        let val = (one - u) * (one - v) * f(i, j) + u * (one - v) * f(i1, j) + (one - u) * v * f(i, j1) + u * v * f(i1, j1);
        val.is_finite().then_some(val)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "{M_TABLE_HEADER}")?;
        for cell in &self.cells {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                cell.m1, cell.sigma_tilde, cell.m12, cell.x_hat1, cell.x_hat2, cell.sigma_hat, cell.converged
            )?;
        }
        Ok(())
    }

    /// Reads a table written by [`MTable::write_csv`].
    pub fn read_csv(r: impl BufRead) -> io::Result<Self> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut cells = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            if k == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 7 {
                return Err(bad(format!("line {}: expected 7 fields", k + 1)));
            }
            let num = |s: &str| s.parse::<f64>().map(T::lit).map_err(|e| bad(format!("line {}: {e}", k + 1)));
            cells.push(MCell {
                m1: num(f[0])?,
                sigma_tilde: num(f[1])?,
                m12: num(f[2])?,
                x_hat1: num(f[3])?,
                x_hat2: num(f[4])?,
                sigma_hat: num(f[5])?,
                converged: f[6] == "true",
            });
        }
        let mut m1: Vec<T> = Vec::new();
        let mut sigma: Vec<T> = Vec::new();
        for cell in &cells {
            if !m1.contains(&cell.m1) {
                m1.push(cell.m1);
            }
            if !sigma.contains(&cell.sigma_tilde) {
                sigma.push(cell.sigma_tilde);
            }
        }
        if m1.len() * sigma.len() != cells.len() {
            return Err(bad("table is not a rectangular grid".into()));
        }
        Ok(Self { m1, sigma, cells })
    }
}

/// Index `i` and weight `u` with `x = (1 - u) g[i] + u g[i + 1]`.
fn locate<T: Real>(g: &[T], x: T) -> Option<(usize, T)> {
    let n = g.len();
    if n == 0 {
        return None;
    }
    // absorb round-off at the edges of the grid
    let slack = T::lit(1e-12) * (g[n - 1] - g[0]).abs().max(T::one());
    if x < g[0] - slack || x > g[n - 1] + slack {
        return None;
    }
    let x = x.max(g[0]).min(g[n - 1]);
    if n == 1 {
        return Some((0, T::zero()));
    }
    let i = (g.partition_point(|&v| v <= x).max(1) - 1).min(n - 2);
    Some((i, (x - g[i]) / (g[i + 1] - g[i])))
}

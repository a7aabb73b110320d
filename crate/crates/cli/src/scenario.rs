//! Declarative scenario files (TOML) and their validation.

use std::path::Path;

use dwell::limit_dynamics::{Configuration, LimitState};
use dwell::two_peaks::{qs_solve, BranchPair};
use dwell::{ConstraintPath, DoubleWell, LinearPath, PiecewiseLinearPath};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    #[serde(rename = "fp")]
    Fp,
    #[serde(rename = "pwm")]
    Pwm,
    #[serde(rename = "tpm")]
    Tpm,
    #[serde(rename = "msm")]
    Msm,
    #[serde(rename = "limit")]
    Limit,
    #[serde(rename = "kramers")]
    Kramers,
    #[serde(rename = "qs")]
    Qs,
    #[serde(rename = "classify")]
    Classify,
    #[serde(rename = "tabulate-M")]
    TabulateM,
    #[serde(rename = "verify")]
    Verify,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Fp => "fp",
            Model::Pwm => "pwm",
            Model::Tpm => "tpm",
            Model::Msm => "msm",
            Model::Limit => "limit",
            Model::Kramers => "kramers",
            Model::Qs => "qs",
            Model::Classify => "classify",
            Model::TabulateM => "tabulate-M",
            Model::Verify => "verify",
        }
    }

    fn needs_path(self) -> bool {
        matches!(self, Model::Fp | Model::Pwm | Model::Tpm | Model::Limit | Model::Kramers | Model::Qs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    Linear,
    Piecewise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Increasing,
    Decreasing,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub kind: PathKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    /// `[t, ell]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Plateau {
    Kramers,
    QuasiStationary,
    Limiting,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_crit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_tilde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_minus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_zero: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_plus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_scan: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau: Option<Plateau>,
    /// M table CSV used instead of live mass splitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_table: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cadence: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<f64>,
}

fn default_dir() -> String {
    "out".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_dir(), cadence: None, snapshots: Vec::new() }
    }
}

/// Grids written as `lo:hi:count`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulateSpec {
    pub m1: String,
    pub sigma: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: Model,
    pub potential: PotentialSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintSpec>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tabulate: Option<TabulateSpec>,
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{key}: {msg}"))
}

fn require<T: Copy>(v: Option<T>, key: &str, model: Model) -> Result<T, CliError> {
    v.ok_or_else(|| invalid(key, format!("required for model {}", model.name())))
}

fn positive(v: f64, key: &str) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, format!("must be positive, got {v}")))
    }
}

fn unit_open(v: f64, key: &str) -> Result<f64, CliError> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(invalid(key, format!("must lie in (0, 1), got {v}")))
    }
}

/// `lo:hi:count`, inclusive and evenly spaced.
pub fn parse_grid(spec: &str, key: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || invalid(key, format!("expected lo:hi:count, got {spec:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !lo.is_finite() || !hi.is_finite() || (n > 1 && hi < lo) {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let f = |k: usize| k as f64 / (n - 1) as f64;
    Ok((0..n).map(|k| lo * (1.0 - f(k)) + hi * f(k)).collect())
}

impl ConstraintSpec {
    pub fn path(&self) -> Result<Box<dyn ConstraintPath<f64>>, CliError> {
        match self.kind {
            PathKind::Linear => {
                let c0 = self.c0.ok_or_else(|| invalid("constraint.c0", "required for a linear path"))?;
                let c1 = self.c1.ok_or_else(|| invalid("constraint.c1", "required for a linear path"))?;
                Ok(Box::new(LinearPath::new(c0, c1)))
            }
            PathKind::Piecewise => {
                let knots = self.knots.as_ref().ok_or_else(|| invalid("constraint.knots", "required for a piecewise path"))?;
                let knots = knots.iter().map(|k| (k[0], k[1])).collect();
                let p = PiecewiseLinearPath::new(knots)
                    .ok_or_else(|| invalid("constraint.knots", "need at least one knot with strictly increasing times"))?;
                Ok(Box::new(p))
            }
        }
    }

    fn observed_direction(&self) -> Direction {
        let steps: Vec<f64> = match self.kind {
            PathKind::Linear => vec![self.c1.unwrap_or(0.0)],
            PathKind::Piecewise => {
                let k = self.knots.as_deref().unwrap_or(&[]);
                k.windows(2).map(|w| w[1][1] - w[0][1]).collect()
            }
        };
        if !steps.is_empty() && steps.iter().all(|&d| d > 0.0) {
            Direction::Increasing
        } else if !steps.is_empty() && steps.iter().all(|&d| d < 0.0) {
            Direction::Decreasing
        } else {
            Direction::None
        }
    }
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(&path.display().to_string(), e))?;
    parse_scenario_str(&text)
}

/// Parses, validates and fills defaults.
pub fn parse_scenario_str(text: &str) -> Result<Scenario, CliError> {
    let raw: Scenario = toml::from_str(text).map_err(|e| CliError::Validation(format!("scenario: {}", e.to_string().trim_end())))?;
    raw.validated()
}

/// Effective configuration as TOML.
pub fn to_toml(s: &Scenario) -> String {
    toml::to_string(s).expect("scenario serializes")
}

impl Scenario {
    pub fn well(&self) -> Result<DoubleWell, CliError> {
        if !self.potential.params.is_empty() {
            return Err(invalid("potential.params", "built-in potentials take no parameters"));
        }
        DoubleWell::by_name(&self.potential.name).map_err(|e| invalid("potential.name", e))
    }

    pub fn validated(mut self) -> Result<Self, CliError> {
        let dw = self.well()?;
        let model = self.model;
        if model.needs_path() {
            let c = self.constraint.as_mut().ok_or_else(|| invalid("constraint", format!("required for model {}", model.name())))?;
            c.path()?;
            if !(c.t_end > c.t0) {
                return Err(invalid("constraint.t_end", "must exceed constraint.t0"));
            }
            let seen = c.observed_direction();
            match c.direction {
                Some(d) if d != Direction::None && d != seen => {
                    return Err(invalid("constraint.direction", format!("{d:?} does not match the path data")));
                }
                _ => c.direction = Some(seen),
            }
        }
        if let Some(cad) = self.output.cadence {
            positive(cad, "output.cadence")?;
        }
        let p = &mut self.params;
        match model {
            Model::Fp | Model::Pwm => {
                let tau = positive(require(p.tau, "params.tau", model)?, "params.tau")?;
                let nu = positive(require(p.nu, "params.nu", model)?, "params.nu")?;
                let dx = positive(*p.dx.get_or_insert(nu / 4.0), "params.dx")?;
                if dx > nu / 2.0 {
                    return Err(invalid("params.dx", format!("must not exceed nu/2 = {}", nu / 2.0)));
                }
                positive(*p.dt.get_or_insert(tau / 4.0), "params.dt")?;
                let theta = *p.theta.get_or_insert(0.5);
                if !(0.5..=1.0).contains(&theta) {
                    return Err(invalid("params.theta", "must lie in [0.5, 1]"));
                }
                if model == Model::Pwm {
                    let m = require(p.point_mass, "params.point_mass", model)?;
                    if !(0.0..1.0).contains(&m) {
                        return Err(invalid("params.point_mass", "must lie in [0, 1)"));
                    }
                    require(p.point_x, "params.point_x", model)?;
                }
            }
            Model::Tpm => {
                positive(require(p.tau, "params.tau", model)?, "params.tau")?;
                let m1 = unit_open(require(p.m1, "params.m1", model)?, "params.m1")?;
                p.rtol.get_or_insert(1e-8);
                p.atol.get_or_insert(1e-10);
                if p.x1.is_none() || p.x2.is_none() {
                    let c = self.constraint.as_ref().unwrap();
                    let ell0 = c.path()?.ell(c.t0);
                    let q = qs_solve(&dw, m1, ell0, BranchPair::MinusPlus)
                        .map_err(|e| invalid("params.x1", format!("no default start: {e}")))?;
                    p.x1.get_or_insert(q.x1);
                    p.x2.get_or_insert(q.x2);
                }
            }
            Model::Msm | Model::TabulateM | Model::Limit => {
                if model == Model::Msm {
                    let m1 = require(p.m1, "params.m1", model)?;
                    if !(m1 > 0.0 && m1 <= 1.0) {
                        return Err(invalid("params.m1", format!("must lie in (0, 1], got {m1}")));
                    }
                    require(p.sigma_tilde, "params.sigma_tilde", model)?;
                }
                let n = *p.n.get_or_insert(if model == Model::Limit { 500 } else { 2000 });
                if n < 2 {
                    return Err(invalid("params.n", "need at least two characteristics"));
                }
                positive(*p.eps.get_or_insert(1e-3 * dw.x_star()), "params.eps")?;
                positive(*p.ds.get_or_insert(1e-3), "params.ds")?;
                positive(*p.s_max.get_or_insert(200.0), "params.s_max")?;
                positive(*p.tol.get_or_insert(1e-8), "params.tol")?;
                if model == Model::TabulateM {
                    let t = self.tabulate.as_ref().ok_or_else(|| invalid("tabulate", "required for model tabulate-M"))?;
                    parse_grid(&t.m1, "tabulate.m1")?;
                    parse_grid(&t.sigma, "tabulate.sigma")?;
                }
                if model == Model::Limit {
                    positive(require(p.a, "params.a", model)?, "params.a")?;
                    positive(*p.dt_scan.get_or_insert(1e-3), "params.dt_scan")?;
                    let c = self.constraint.as_ref().unwrap();
                    let ell0 = c.path()?.ell(c.t0);
                    if p.m_minus.is_none() && p.m_zero.is_none() && p.m_plus.is_none() {
                        let s = LimitState::single_peak(&dw, ell0, c.t0);
                        p.m_minus = Some(s.m_minus);
                        p.m_zero = Some(s.m_zero);
                        p.m_plus = Some(s.m_plus);
                    }
                    let masses = (p.m_minus.unwrap_or(0.0), p.m_zero.unwrap_or(0.0), p.m_plus.unwrap_or(0.0));
                    p.m_minus = Some(masses.0);
                    p.m_zero = Some(masses.1);
                    p.m_plus = Some(masses.2);
                    let phi = *p.phi.get_or_insert(0.0);
                    if Configuration::from_masses(masses.0, masses.1, masses.2).is_none() {
                        return Err(invalid("params.m_minus", "masses must be non-negative, sum to one and occupy at most two branches"));
                    }
                    LimitState::from_ell(&dw, masses, phi, ell0, c.t0)
                        .map_err(|e| invalid("params.m_minus", format!("initial state: {e}")))?
                        .validate(&dw, p.a.unwrap())
                        .map_err(|e| invalid("params.phi", format!("initial state: {e}")))?;
                }
            }
            Model::Kramers => {
                positive(require(p.b, "params.b", model)?, "params.b")?;
                positive(require(p.nu, "params.nu", model)?, "params.nu")?;
                let m0 = *p.m0.get_or_insert(1.0);
                if !(0.0..=1.0).contains(&m0) {
                    return Err(invalid("params.m0", "must lie in [0, 1]"));
                }
                p.rtol.get_or_insert(1e-9);
                p.atol.get_or_insert(1e-14);
            }
            Model::Qs => {
                let plateau = *p.plateau.get_or_insert(if p.b.is_some() { Plateau::Kramers } else { Plateau::QuasiStationary });
                if plateau == Plateau::Kramers {
                    let b = positive(require(p.b, "params.b", model)?, "params.b")?;
                    if b >= dw.landmarks().h_crit {
                        return Err(invalid("params.b", format!("must lie below h_crit = {}", dw.landmarks().h_crit)));
                    }
                }
                if self.constraint.as_ref().unwrap().direction != Some(Direction::Increasing) {
                    return Err(invalid("constraint", "model qs needs an increasing path"));
                }
                let c = self.constraint.as_ref().unwrap();
                self.output.cadence.get_or_insert((c.t_end - c.t0) / 1000.0);
            }
            Model::Classify => {
                unit_open(require(p.tau, "params.tau", model)?, "params.tau")?;
                unit_open(require(p.nu, "params.nu", model)?, "params.nu")?;
            }
            Model::Verify => {}
        }
        if matches!(model, Model::Fp | Model::Pwm) {
            let c = self.constraint.as_ref().unwrap();
            self.output.cadence.get_or_insert((c.t_end - c.t0) / 400.0);
        }
        Ok(self)
    }
}

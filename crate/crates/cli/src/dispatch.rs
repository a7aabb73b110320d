//! Runs a validated scenario and writes its artifacts.

use std::path::{Path, PathBuf};

use dwell::fast_reaction::{
    classify_regime, constrained_kramers_ode, limit_trajectory, qs_psi, sigma_b, KramersOdeOptions, PlateauMode, RegimeCoordinates,
};
use dwell::fp_solver::{gaussian_initial, pwm_run, run as fp_run, FpParams, FpRun, FpSolver, Grid, PointPeak, RunOptions};
use dwell::limit_dynamics::{integrate, LimitOptions, LimitState, LiveSplit, MassSplitProvider};
use dwell::mass_splitting::{run_split, tabulate_m, MTable, SplitOptions};
use dwell::ode::OdeOptions;
use dwell::potential::verify_assumptions;
use dwell::two_peaks::{tpm_integrate, TpmOptions};
use dwell::DoubleWell;
use serde::Serialize;

use crate::output::{num, write_csv, write_json, write_text};
use crate::scenario::{parse_grid, to_toml, Model, Plateau, Scenario};
use crate::{runtime, CliError};

/// What a run produced, for the one-line summary.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Summary {
    pub model: String,
    pub events: usize,
    pub final_masses: Vec<f64>,
    pub note: String,
    pub files: Vec<PathBuf>,
}

impl Summary {
    pub fn line(&self, wall: f64) -> String {
        let masses: Vec<String> = self.final_masses.iter().map(|m| format!("{m:.6}")).collect();
        let mut s = format!("model={} events={} final_masses=({}) wall={wall:.3}s", self.model, self.events, masses.join(","));
        if !self.note.is_empty() {
            s.push(' ');
            s.push_str(&self.note);
        }
        s
    }
}

fn split_options(s: &Scenario, dw: &DoubleWell) -> SplitOptions<f64> {
    let p = &s.params;
    let base = SplitOptions::for_well(dw);
    SplitOptions {
        n: p.n.unwrap_or(base.n),
        eps: p.eps.unwrap_or(base.eps),
        ds: p.ds.unwrap_or(base.ds),
        s_max: p.s_max.unwrap_or(base.s_max),
        tol: p.tol.unwrap_or(base.tol),
        ..base
    }
}

struct Out {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Out {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn file(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }
}

#[derive(Serialize)]
struct Metadata<'a> {
    model: &'a str,
    potential: &'a str,
    landmarks: dwell::Landmarks,
}

/// Runs `scenario`, writing into `out_dir` (or the scenario's own directory).
pub fn dispatch(scenario: &Scenario, out_dir: Option<&Path>) -> Result<Summary, CliError> {
    let dw = scenario.well()?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&scenario.output.dir));
    let mut out = Out::new(&dir)?;
    let effective = out.file("effective.toml");
    write_text(&effective, &to_toml(scenario))?;
    let meta = Metadata { model: scenario.model.name(), potential: dw.name(), landmarks: *dw.landmarks() };
    let meta_path = out.file("metadata.json");
    write_json(&meta_path, &meta)?;
    let mut summary = match scenario.model {
        Model::Fp | Model::Pwm => run_fp(scenario, &dw, &mut out)?,
        Model::Tpm => run_tpm(scenario, &dw, &mut out)?,
        Model::Msm => run_msm(scenario, &dw, &mut out)?,
        Model::TabulateM => run_tabulate(scenario, &dw, &mut out)?,
        Model::Limit => run_limit(scenario, &dw, &mut out)?,
        Model::Kramers => run_kramers(scenario, &dw, &mut out)?,
        Model::Qs => run_qs(scenario, &dw, &mut out)?,
        Model::Classify => run_classify(scenario, &dw, &mut out)?,
        Model::Verify => run_verify(scenario, &mut out)?,
    };
    summary.model = scenario.model.name().to_string();
    summary.files = out.files;
    Ok(summary)
}

fn run_fp(s: &Scenario, dw: &DoubleWell, out: &mut Out) -> Result<Summary, CliError> {
    let p = &s.params;
    let c = s.constraint.as_ref().unwrap();
    let path = c.path()?;
    let (tau, nu) = (p.tau.unwrap(), p.nu.unwrap());
    let grid = Grid::for_well(dw, nu, p.dx).map_err(runtime)?;
    let params = FpParams { theta: p.theta.unwrap(), ..FpParams::new(tau, nu) };
    let mut solver = FpSolver::new(dw.clone(), params, grid.clone()).map_err(runtime)?;
    let mut field = gaussian_initial(dw, &grid, nu, path.ell(c.t0)).map_err(runtime)?;
    field.t = c.t0;
    let opts = RunOptions { dt_max: p.dt.unwrap(), cadence: s.output.cadence.unwrap(), snapshot_times: s.output.snapshots.clone() };
    let run: FpRun<f64> = if s.model == Model::Pwm {
        let point = PointPeak { mass: p.point_mass.unwrap(), x: p.point_x.unwrap() };
        for r in field.rho.iter_mut() {
            *r *= 1.0 - point.mass;
        }
        pwm_run(&mut solver, field, point, path.as_ref(), c.t_end, &opts).map_err(runtime)?
    } else {
        fp_run(&mut solver, field, path.as_ref(), c.t_end, &opts).map_err(runtime)?
    };
    let ss = dw.sigma_star();
    let series = out.file("series.csv");
    let header = ["t", "ell", "sigma", "y", "m_minus", "m_plus", "E", "S", "D", "width", "phase"];
    write_csv(
        &series,
        &header,
        run.series.iter().map(|o| {
            let v =
                [o.t, o.ell, o.sigma, o.y, o.m_minus, o.m_plus, o.energy, o.entropy, o.dissipation, o.width, ss * (o.m_plus - o.m_minus)];
            v.iter().map(|&x| num(x)).collect()
        }),
    )?;
    let centers = grid.centers();
    let mut index = Vec::new();
    for (k, (t, rho)) in run.snapshots.iter().enumerate() {
        let name = format!("snapshot_{k:03}.csv");
        let f = out.file(&name);
        write_csv(&f, &["x", "rho"], centers.iter().zip(rho).map(|(x, r)| vec![num(*x), num(*r)]))?;
        index.push(vec![k.to_string(), num(*t), name]);
    }
    if !index.is_empty() {
        let f = out.file("snapshots.csv");
        write_csv(&f, &["index", "t", "file"], index)?;
    }
    if !run.point_track.is_empty() {
        let f = out.file("point.csv");
        write_csv(&f, &["t", "x2"], run.point_track.iter().map(|(t, x)| vec![num(*t), num(*x)]))?;
    }
    let f = out.file("diagnostics.json");
    write_json(&f, &run.diagnostics)?;
    let last = run.series.last().unwrap();
    Ok(Summary { final_masses: vec![last.m_minus, last.m_plus], note: format!("steps={}", run.diagnostics.steps), ..Default::default() })
}

fn run_tpm(s: &Scenario, dw: &DoubleWell, out: &mut Out) -> Result<Summary, CliError> {
    let p = &s.params;
    let c = s.constraint.as_ref().unwrap();
    let path = c.path()?;
    let m1 = p.m1.unwrap();
    let opts = TpmOptions { atol: p.atol.unwrap(), rtol: p.rtol.unwrap(), stop_at_merging: false };
    let tr = tpm_integrate(dw, m1, p.tau.unwrap(), (p.x1.unwrap(), p.x2.unwrap()), path.as_ref(), c.t0, c.t_end, &opts).map_err(runtime)?;
    let f = out.file("trajectory.csv");
    write_csv(
        &f,
        &["t", "x1", "x2", "sigma", "E", "D"],
        tr.samples.iter().map(|q| [q.t, q.x1, q.x2, q.sigma, q.energy, q.dissipation].iter().map(|&x| num(x)).collect()),
    )?;
    Ok(Summary { final_masses: vec![m1, 1.0 - m1], note: format!("stop={:?}", tr.stop), ..Default::default() })
}

fn run_msm(s: &Scenario, dw: &DoubleWell, out: &mut Out) -> Result<Summary, CliError> {
    let p = &s.params;
    let opts = split_options(s, dw);
    let (m1, st) = (p.m1.unwrap(), p.sigma_tilde.unwrap());
    let r = run_split(dw, m1, st, &opts).map_err(runtime)?;
    let f = out.file("result.json");
    write_json(&f, &r)?;
    Ok(Summary { final_masses: vec![m1 - r.m12, r.m12], note: format!("sigma_hat={:.6}", r.sigma_hat), ..Default::default() })
}

fn run_tabulate(s: &Scenario, dw: &DoubleWell, out: &mut Out) -> Result<Summary, CliError> {
    let t = s.tabulate.as_ref().unwrap();
    let m1 = parse_grid(&t.m1, "tabulate.m1")?;
    let sigma = parse_grid(&t.sigma, "tabulate.sigma")?;
    let table = tabulate_m(dw, &m1, &sigma, &split_options(s, dw));
    let f = out.file("m_table.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&f)?);
    table.write_csv(&mut w)?;
    std::io::Write::flush(&mut w)?;
    let failed = table.cells.iter().filter(|c| !c.converged).count();
    Ok(Summary { note: format!("cells={} unconverged={failed}", table.cells.len()), ..Default::default() })
}

fn run_limit(s: &Scenario, dw: &DoubleWell, out: &mut Out) -> Result<Summary, CliError> {
    let p = &s.params;
    let c = s.constraint.as_ref().unwrap();
    let path = c.path()?;
    let masses = (p.m_minus.unwrap(), p.m_zero.unwrap(), p.m_plus.unwrap());
    let init = LimitState::from_ell(dw, masses, p.phi.unwrap(), path.ell(c.t0), c.t0).map_err(runtime)?;
    let provider: Box<dyn MassSplitProvider<f64>> = match &p.m_table {
        Some(file) => {
            let r = std::fs::File::open(file).map_err(|e| CliError::Validation(format!("params.m_table: {file}: {e}")))?;
            let table = MTable::read_csv(std::io::BufReader::new(r)).map_err(|e| CliError::Validation(format!("params.m_table: {e}")))?;
            Box::new(table)
        }
        None => Box::new(LiveSplit { dw: dw.clone(), opts: split_options(s, dw) }),
    };
    let opts = LimitOptions { dt_scan: p.dt_scan.unwrap(), ..LimitOptions::default() };
    let tr = integrate(dw, p.a.unwrap(), path.as_ref(), init, c.t_end, provider.as_ref(), &opts).map_err(runtime)?;
    let f = out.file("trajectory.csv");
    write_csv(
        &f,
        &["t", "ell", "config", "m_minus", "m_zero", "m_plus", "sigma", "phi", "E"],
        tr.samples.iter().map(|q| {
            let mut row = vec![num(q.t), num(q.ell), q.config.label().to_string()];
            row.extend([q.m_minus, q.m_zero, q.m_plus, q.sigma, q.phi, q.energy].iter().map(|&x| num(x)));
            row
        }),
    )?;
    let f = out.file("events.json");
    write_json(&f, &tr.events)?;
    let last = tr.samples.last().unwrap();
    Ok(Summary {
        events: tr.events.len(),
        final_masses: vec![last.m_minus, last.m_zero, last.m_plus],
        note: format!("final_config={}", last.config.label()),
        ..Default::default()
    })
}

fn run_kramers(s: &Scenario, dw: &DoubleWell, out: &mut Out) -> Result<Summary, CliError> {
    let p = &s.params;
    let c = s.constraint.as_ref().unwrap();
    let path = c.path()?;
    let base = KramersOdeOptions::default();
    let opts = KramersOdeOptions { ode: OdeOptions { rtol: p.rtol.unwrap(), atol: p.atol.unwrap(), ..base.ode }, ..base };
    let series =
        constrained_kramers_ode(dw, p.b.unwrap(), p.nu.unwrap(), path.as_ref(), p.m0.unwrap(), c.t0, c.t_end, &opts).map_err(runtime)?;
    let f = out.file("series.csv");
    write_csv(
        &f,
        &["t", "ell", "sigma", "psi", "m_minus", "m_plus", "E"],
        series.iter().map(|q| [q.t, q.ell, q.sigma, q.psi, q.m_minus, q.m_plus, q.energy].iter().map(|&x| num(x)).collect()),
    )?;
    let last = series.last().unwrap();
    let note = match sigma_b(dw, p.b.unwrap()) {
        Ok(sb) => format!("sigma_b={sb:.6}"),
        Err(_) => "sigma_b=0".into(),
    };
    Ok(Summary { final_masses: vec![last.m_minus, last.m_plus], note, ..Default::default() })
}

fn run_qs(s: &Scenario, dw: &DoubleWell, out: &mut Out) -> Result<Summary, CliError> {
    let p = &s.params;
    let c = s.constraint.as_ref().unwrap();
    let path = c.path()?;
    let mode = match p.plateau.unwrap() {
        Plateau::Kramers => PlateauMode::Kramers(p.b.unwrap()),
        Plateau::QuasiStationary => PlateauMode::QuasiStationary,
        Plateau::Limiting => PlateauMode::Limiting,
    };
    let lim = limit_trajectory(dw, mode, path.as_ref(), c.t0, c.t_end).map_err(runtime)?;
    let h = s.output.cadence.unwrap();
    let n = ((c.t_end - c.t0) / h).round().max(1.0) as usize;
    let rows: Vec<_> = (0..=n)
        .map(|k| {
            let t = if k == n { c.t_end } else { c.t0 + h * k as f64 };
            lim.sample(path.as_ref(), t)
        })
        .collect();
    let f = out.file("trajectory.csv");
    write_csv(
        &f,
        &["t", "ell", "sigma", "m_minus", "m_plus", "x_minus", "x_plus", "E", "E_rate", "psi_qs"],
        rows.iter().map(|q| {
            let psi = qs_psi(dw, q.ell).map(|r| r.psi).unwrap_or(f64::NAN);
            [q.t, q.ell, q.sigma, q.m_minus, q.m_plus, q.x_minus, q.x_plus, q.energy, q.energy_rate, psi].iter().map(|&x| num(x)).collect()
        }),
    )?;
    let last = rows.last().unwrap();
    Ok(Summary {
        final_masses: vec![last.m_minus, last.m_plus],
        note: format!("sigma_b={:.6} D_b={:.6}", lim.sigma_b, lim.d_b),
        ..Default::default()
    })
}

#[derive(Serialize)]
struct ClassifyReport {
    tau: f64,
    nu: f64,
    regime: String,
    supported: bool,
    coordinates: RegimeCoordinates,
}

fn run_classify(s: &Scenario, dw: &DoubleWell, out: &mut Out) -> Result<Summary, CliError> {
    let p = &s.params;
    let (tau, nu) = (p.tau.unwrap(), p.nu.unwrap());
    let regime = classify_regime(tau, nu, dw.landmarks().h_crit, p.a_crit).map_err(|e| CliError::Validation(e.to_string()))?;
    let report = ClassifyReport {
        tau,
        nu,
        regime: regime.label().into(),
        supported: regime.is_supported(),
        coordinates: RegimeCoordinates::new(tau, nu),
    };
    let f = out.file("regime.json");
    write_json(&f, &report)?;
    if !regime.is_supported() {
        return Err(CliError::Validation(format!("regime {regime} at tau = {tau:e}, nu = {nu:e} has no limit model")));
    }
    Ok(Summary { note: format!("regime={regime}"), ..Default::default() })
}

fn run_verify(s: &Scenario, out: &mut Out) -> Result<Summary, CliError> {
    let pot = dwell::potential::builtin::<f64>(&s.potential.name).map_err(|e| CliError::Validation(e.to_string()))?;
    let report = verify_assumptions(pot);
    let f = out.file("assumptions.json");
    write_json(&f, &report)?;
    let flag = |ok: bool| if ok { "ok" } else { "FAIL" };
    Ok(Summary { note: format!("A1={} A2={} A3={}", flag(report.a1.ok), flag(report.a2.ok), flag(report.a3.ok)), ..Default::default() })
}

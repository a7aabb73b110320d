use std::path::Path;
use std::process::Command;

use dwell_cli::dispatch::dispatch;
use dwell_cli::presets::{preset, PRESETS};
use dwell_cli::scenario::{parse_scenario, parse_scenario_str, to_toml, Model};
use dwell_cli::CliError;

fn dwell() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dwell"))
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

const FP_MINIMAL: &str = r#"
model = "fp"
[potential]
name = "quartic"
[constraint]
kind = "linear"
c0 = -1.5
c1 = 1.0
t_end = 0.2
[params]
tau = 0.05
nu = 0.1
"#;

#[test]
fn every_preset_parses() {
    for (name, text) in PRESETS {
        let s = parse_scenario_str(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(s.output.dir.ends_with(name), "{name}: {}", s.output.dir);
    }
}

#[test]
fn fig2_preset_contents() {
    let s = parse_scenario_str(preset("fig2").unwrap()).unwrap();
    assert_eq!(s.model, Model::Fp);
    assert_eq!(s.potential.name, "arctan");
    let c = s.constraint.as_ref().unwrap();
    let path = c.path().unwrap();
    assert_eq!(path.ell(0.0), -4.0);
    assert_eq!(path.ell(4.0), 0.0);
    assert_eq!(s.params.tau, Some(0.05));
    assert_eq!(s.params.nu, Some(0.05));
}

#[test]
fn missing_nu_for_fp_is_a_validation_error() {
    let text = FP_MINIMAL.replace("nu = 0.1\n", "");
    match parse_scenario_str(&text) {
        Err(CliError::Validation(msg)) => assert!(msg.contains("params.nu"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    let cases = [
        (FP_MINIMAL.replace("tau = 0.05", "tau = 0.05\ntaus = 1.0"), "taus"),
        (FP_MINIMAL.replace("tau = 0.05", "tau = -0.05"), "params.tau"),
        (FP_MINIMAL.replace("c1 = 1.0", "c1 = 1.0\ndirection = \"decreasing\""), "constraint.direction"),
        (FP_MINIMAL.replace("nu = 0.1", "nu = 0.1\ndx = 0.2"), "params.dx"),
        (FP_MINIMAL.replace("\"quartic\"", "\"sextic\""), "potential"),
    ];
    for (text, key) in cases {
        match parse_scenario_str(&text) {
            Err(CliError::Validation(msg)) => assert!(msg.contains(key), "{key}: {msg}"),
            other => panic!("{key}: {other:?}"),
        }
    }
}

#[test]
fn defaults_are_filled_and_echoed() {
    let s = parse_scenario_str(FP_MINIMAL).unwrap();
    assert_eq!(s.params.dx, Some(0.1 / 4.0));
    assert_eq!(s.params.dt, Some(0.05 / 4.0));
    assert_eq!(s.params.theta, Some(0.5));
    let echoed = to_toml(&s);
    assert!(echoed.contains("dx = 0.025"), "{echoed}");
    assert!(echoed.contains("direction = \"increasing\""), "{echoed}");
}

#[test]
fn effective_config_round_trips() {
    for (name, text) in PRESETS.iter().copied().chain([("fp-minimal", FP_MINIMAL)]) {
        let s = parse_scenario_str(text).unwrap();
        let again = parse_scenario_str(&to_toml(&s)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(s, again, "{name}");
        assert_eq!(to_toml(&s), to_toml(&again), "{name}");
    }
}

#[test]
fn parse_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.toml");
    std::fs::write(&p, FP_MINIMAL).unwrap();
    assert_eq!(parse_scenario(&p).unwrap(), parse_scenario_str(FP_MINIMAL).unwrap());
    assert!(matches!(parse_scenario(&dir.path().join("none.toml")), Err(CliError::Validation(_))));
}

#[test]
fn fp_run_writes_series_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let text = FP_MINIMAL.to_string() + "[output]\ncadence = 0.05\nsnapshots = [0.0, 0.1]\n";
    let s = parse_scenario_str(&text).unwrap();
    let summary = dispatch(&s, Some(dir.path())).unwrap();
    assert_eq!(summary.final_masses.len(), 2);
    assert_eq!(header(&dir.path().join("series.csv")), "t,ell,sigma,y,m_minus,m_plus,E,S,D,width,phase");
    assert_eq!(header(&dir.path().join("snapshot_000.csv")), "x,rho");
    let index = std::fs::read_to_string(dir.path().join("snapshots.csv")).unwrap();
    assert_eq!(index.lines().count(), 3, "{index}");
    let rows = std::fs::read_to_string(dir.path().join("series.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 5);
    // 17 significant digits.
    let first = rows.lines().nth(1).unwrap();
    assert!(first.split(',').all(|f| f.contains('e')), "{first}");
    let reparsed = parse_scenario(&dir.path().join("effective.toml")).unwrap();
    assert_eq!(reparsed, s);
}

#[test]
fn csv_schemas_for_plot_scripts() {
    let cases: [(&str, &str, &str); 5] = [
        ("limit-type1", "trajectory.csv", "t,ell,config,m_minus,m_zero,m_plus,sigma,phi,E"),
        ("kramers-b05", "series.csv", "t,ell,sigma,psi,m_minus,m_plus,E"),
        ("qs-plateau", "trajectory.csv", "t,ell,sigma,m_minus,m_plus,x_minus,x_plus,E,E_rate,psi_qs"),
        ("tpm-m03", "trajectory.csv", "t,x1,x2,sigma,E,D"),
        ("msm-sym", "result.json", ""),
    ];
    for (name, file, expected) in cases {
        let dir = tempfile::tempdir().unwrap();
        let s = parse_scenario_str(preset(name).unwrap()).unwrap();
        dispatch(&s, Some(dir.path())).unwrap_or_else(|e| panic!("{name}: {e}"));
        let path = dir.path().join(file);
        if expected.is_empty() {
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
            assert!(v.get("m12").is_some(), "{name}: {v}");
        } else {
            assert_eq!(header(&path), expected, "{name}");
        }
    }
}

#[test]
fn limit_run_emits_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let s = parse_scenario_str(preset("limit-type1").unwrap()).unwrap();
    let summary = dispatch(&s, Some(dir.path())).unwrap();
    assert_eq!(summary.events, 2);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("events.json")).unwrap()).unwrap();
    let kinds: Vec<&str> = v.as_array().unwrap().iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["Switching", "MergingContinuous"]);
    for e in v.as_array().unwrap() {
        for key in ["t", "pre", "post", "d_sigma", "d_energy"] {
            assert!(e.get(key).is_some(), "{key}");
        }
    }
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    for name in ["limit-a03", "kramers-b05", "tpm-m03"] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            let st = dwell().args(["run", "--preset", name, "--out"]).arg(d.path()).output().unwrap();
            assert!(st.status.success(), "{name}: {}", String::from_utf8_lossy(&st.stderr));
        }
        let (fa, fb) = (read_all(a.path()), read_all(b.path()));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{name}");
    }
}

#[test]
fn tabulate_subcommand_matches_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (d, w) in [(&a, "1"), (&b, "3")] {
        let st = dwell()
            .args(["tabulate-M", "--m1", "0.2:0.8:3", "--sigma", "0:1:3", "--n", "200", "--workers", w, "--out"])
            .arg(d.path())
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    }
    let ta = std::fs::read(a.path().join("m_table.csv")).unwrap();
    assert_eq!(ta, std::fs::read(b.path().join("m_table.csv")).unwrap());
    let text = String::from_utf8(ta).unwrap();
    assert_eq!(text.lines().next().unwrap(), "m1,sigma_tilde,m12,x_hat1,x_hat2,sigma_hat,converged");
    assert_eq!(text.lines().count(), 1 + 9);
}

#[test]
fn classify_and_verify_subcommands() {
    let d = tempfile::tempdir().unwrap();
    let st = dwell().args(["classify", "--tau", "1e-50", "--nu", "0.1", "--a-crit", "1", "--out"]).arg(d.path()).output().unwrap();
    assert!(st.status.success());
    assert!(String::from_utf8_lossy(&st.stdout).contains("regime=fast-IV"), "{}", String::from_utf8_lossy(&st.stdout));
    let st = dwell().args(["classify", "--tau", "1e-3", "--nu", "1e-12", "--out"]).arg(d.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&st.stderr).contains("OPEN"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("regime.json")).unwrap()).unwrap();
    assert_eq!(v["supported"], false);
    let st = dwell().args(["verify-potential", "--potential", "quartic", "--out"]).arg(d.path()).output().unwrap();
    assert!(st.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("assumptions.json")).unwrap()).unwrap();
    assert_eq!(v["a3"]["ok"], true);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    // usage error
    assert_eq!(dwell().args(["run", "--bogus"]).status().unwrap().code(), Some(1));
    assert_eq!(dwell().args(["run", "--preset", "nope"]).status().unwrap().code(), Some(1));
    // validation error
    let bad = d.path().join("bad.toml");
    std::fs::write(&bad, FP_MINIMAL.replace("nu = 0.1\n", "")).unwrap();
    let out = dwell().args(["run", "--scenario"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("params.nu"));
    // runtime error: output directory cannot be created
    let blocker = d.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = dwell().args(["run", "--preset", "limit-type1", "--out"]).arg(blocker.join("sub")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(dwell().args(["run", "--preset", "limit-type1", "--out"]).arg(d.path().join("ok")).status().unwrap().code(), Some(0));
}

#[test]
fn grids_hit_both_endpoints() {
    use dwell_cli::scenario::parse_grid;
    let g = parse_grid("0.1:1:10", "m1").unwrap();
    assert_eq!(g.len(), 10);
    assert_eq!((g[0], g[9]), (0.1, 1.0));
    assert_eq!(parse_grid("-1.4:1.4:29", "sigma").unwrap()[28], 1.4);
    assert_eq!(parse_grid("0.5:0.5:1", "m1").unwrap(), vec![0.5]);
    for bad in ["1:0:3", "0:1", "a:1:2", "0:1:0"] {
        assert!(matches!(parse_grid(bad, "m1"), Err(CliError::Validation(_))), "{bad}");
    }
}

#[test]
fn limit_run_from_table() {
    let d = tempfile::tempdir().unwrap();
    let table = d.path().join("table");
    let st =
        dwell().args(["tabulate-M", "--m1", "0.1:1:10", "--sigma", "-1.4:1.4:29", "--n", "200", "--out"]).arg(&table).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let text = preset("limit-a03")
        .unwrap()
        .replace("[params]", &format!("[params]\nm_table = {:?}", table.join("m_table.csv").display().to_string()));
    let s = parse_scenario_str(&text).unwrap();
    let summary = dispatch(&s, Some(&d.path().join("run"))).unwrap();
    assert_eq!(summary.note, "final_config=S+");
    assert!(summary.events >= 4);
}

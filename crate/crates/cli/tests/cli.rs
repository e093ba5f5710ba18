use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use usot::oracles::{hk_two_dirac, mass_curve};
use usot_cli::formats::{density_to_bytes, Trajectory};

fn usot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_usot"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"{
    "schema": "usot/1",
    "grid": {"dim": 1, "m": 16, "q": 8},
    "solver": {"alpha": 1.0, "beta": 4.0, "max_iters": 4000},
    "marginals": {
        "mu": {"kind": "gaussian", "center": [0.3, 0.0], "sigma": 0.08},
        "nu": {"kind": "gaussian", "center": [0.7, 0.0], "sigma": 0.08, "mass": 1.2}
    }
}"#;

fn solve(cfg: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--quiet", "solve", "--config", cfg, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    usot(&args)
}

fn masses_csv(path: &Path) -> Vec<(usize, f64, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn solve_writes_artifacts_that_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let o = solve(&cfg, &out, &["--emit-frames"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let bytes = fs::read(out.join("trajectory.f64")).unwrap();
    let traj = Trajectory::from_bytes(&bytes).unwrap();
    assert_eq!(traj.to_bytes(), bytes);
    assert_eq!(traj.grid.q(), 8);
    assert!(traj.u.n.is_empty());

    let masses = masses_csv(&out.join("masses.csv"));
    assert_eq!(masses.len(), 9);
    assert!((masses[0].2 - 1.0).abs() < 1e-12);
    assert!((masses[8].2 - 1.2).abs() < 1e-12);
    assert_eq!(masses[8].1, 1.0);

    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let resolved = &report["resolved_config"];
    assert_eq!(resolved["solver"]["stop_tol"], 1e-6);
    assert_eq!(resolved["solver"]["hk"]["eps_rel"], 1e-3);
    assert_eq!(resolved["output"]["emit_frames"], true);
    assert_eq!(report["frames"].as_array().unwrap().len(), 9);

    let frame = fs::read(out.join("frame_0004.pgm")).unwrap();
    assert!(frame.starts_with(b"P5\n16 1\n255\n"));
    assert_eq!(frame.len(), b"P5\n16 1\n255\n".len() + 16);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("a");
    assert!(solve(&cfg, &out, &[]).status.success());
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let again = tmp.path().join("again.json");
    fs::write(&again, report["resolved_config"].to_string()).unwrap();
    let out2 = tmp.path().join("b");
    assert!(solve(again.to_str().unwrap(), &out2, &[]).status.success());
    assert_eq!(
        fs::read(out.join("trajectory.f64")).unwrap(),
        fs::read(out2.join("trajectory.f64")).unwrap()
    );
}

#[test]
fn repeated_runs_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert!(solve(&cfg, d, &["--emit-frames", "--seed", "7"]).status.success());
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.len() > 3);
    for name in names {
        let (x, y) = (fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        if name == "report.json" {
            let mut x: Value = serde_json::from_slice(&x).unwrap();
            let mut y: Value = serde_json::from_slice(&y).unwrap();
            for v in [&mut x, &mut y] {
                v["timing"] = Value::Null;
                v["resolved_config"]["output"]["dir"] = Value::Null;
            }
            assert_eq!(x, y);
        } else {
            assert_eq!(x, y, "{name} differs");
        }
    }
}

fn error_code(o: &Output) -> (i32, Value) {
    let line = String::from_utf8_lossy(&o.stderr).lines().last().unwrap_or("").to_owned();
    let v: Value = serde_json::from_str(&line).unwrap_or(Value::Null);
    (o.status.code().unwrap(), v)
}

#[test]
fn config_errors_exit_2_with_a_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("\"q\": 8", "\"q\": 8, \"bogus\": true"));
    let (code, rec) = error_code(&solve(&cfg, &tmp.path().join("o"), &[]));
    assert_eq!(code, 2);
    assert_eq!(rec["error"]["kind"], "config");
    assert_eq!(rec["error"]["code"], 2);

    let cfg = write_config(tmp.path(), &SMALL.replace("\"beta\": 4.0", "\"beta\": -1.0"));
    assert_eq!(error_code(&solve(&cfg, &tmp.path().join("o"), &[])).0, 2);
}

#[test]
fn missing_files_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let (code, rec) = error_code(&solve(missing.to_str().unwrap(), &tmp.path().join("o"), &[]));
    assert_eq!(code, 4);
    assert_eq!(rec["error"]["kind"], "io");

    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    assert_eq!(error_code(&solve(&cfg, &blocker, &[])).0, 4);
}

#[test]
fn unconverged_exits_3_and_still_writes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("\"max_iters\": 4000", "\"max_iters\": 5"));
    let out = tmp.path().join("o");
    let (code, rec) = error_code(&solve(&cfg, &out, &[]));
    assert_eq!(code, 3);
    assert_eq!(rec["error"]["kind"], "unconverged");
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
    assert!(out.join("trajectory.f64").exists());
}

#[test]
fn density_files_are_ingested() {
    let tmp = tempfile::tempdir().unwrap();
    let g = usot::grid::GridSpec::new_1d(16, 8).unwrap();
    fs::write(tmp.path().join("mu.f64"), density_to_bytes(&g, &[1.0; 16])).unwrap();
    let body = SMALL.replace(
        r#"{"kind": "gaussian", "center": [0.3, 0.0], "sigma": 0.08}"#,
        r#"{"kind": "file", "path": "mu.f64"}"#,
    );
    let cfg = write_config(tmp.path(), &body);
    let out = tmp.path().join("o");
    assert!(solve(&cfg, &out, &[]).status.success());
    assert!((masses_csv(&out.join("masses.csv"))[0].2 - 1.0).abs() < 1e-12);

    let g = usot::grid::GridSpec::new_1d(12, 8).unwrap();
    fs::write(tmp.path().join("mu.f64"), density_to_bytes(&g, &[1.0; 12])).unwrap();
    let (code, rec) = error_code(&solve(&cfg, &out, &[]));
    assert_eq!(code, 2);
    assert_eq!(rec["error"]["kind"], "ingest");
}

fn hk_value(cfg: &str, out: &Path) -> f64 {
    let o = usot(&["hk", "--config", cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    v["hk2"].as_f64().unwrap()
}

#[test]
fn hk_of_identical_marginals_is_near_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL.replace("\"center\": [0.7, 0.0], \"sigma\": 0.08, \"mass\": 1.2", "\"center\": [0.3, 0.0], \"sigma\": 0.08");
    let cfg = write_config(tmp.path(), &body);
    assert!(hk_value(&cfg, &tmp.path().join("o")).abs() < 1e-3);
}

#[test]
fn hk_of_two_atoms_matches_the_scalar_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
        "schema": "usot/1",
        "grid": {"dim": 1, "m": 32, "q": 2},
        "solver": {"alpha": 1.0, "beta": 4.0, "hk": {"eps_rel": 1e-5, "max_iters": 50000, "tol": 1e-10}},
        "marginals": {
            "mu": {"kind": "atoms", "atoms": [[8, 1.0]]},
            "nu": {"kind": "atoms", "atoms": [[14, 0.7]]}
        }
    }"#;
    let cfg = write_config(tmp.path(), body);
    let got = hk_value(&cfg, &tmp.path().join("o"));
    let want = hk_two_dirac(1.0, 0.7, 6.0 / 32.0, 1.0, 4.0);
    assert!((got - want).abs() <= 1e-3 * want, "{got} vs {want}");

    let o = usot(&["oracle", "two-dirac", "--a", "1", "--b", "0.7", "--d", "0.1875", "--alpha", "1", "--beta", "4"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["hk2"].as_f64().unwrap() - want).abs() < 1e-12);
}

#[test]
fn oracles_print_reference_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = |kind: &str| -> Value {
        let o = usot(&["oracle", kind, "--config", &cfg]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_slice(&o.stdout).unwrap()
    };
    let fr = run("fr");
    assert!((fr["action"].as_f64().unwrap() - 4.0 * fr["hellinger_sq"].as_f64().unwrap()).abs() < 1e-12);
    let balanced = write_config(tmp.path(), &SMALL.replace(", \"mass\": 1.2", ""));
    let o = usot(&["oracle", "w2", "--config", &balanced]);
    let w2: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((w2["w2_sq"].as_f64().unwrap() - 0.16).abs() < 1e-3);
    let cfg = write_config(tmp.path(), SMALL);
    let mc = {
        let o = usot(&["oracle", "mass-curve", "--config", &cfg]);
        serde_json::from_slice::<Value>(&o.stdout).unwrap()
    };
    let hk2 = mc["hk2"].as_f64().unwrap();
    let table = mc["table"].as_array().unwrap();
    assert_eq!(table.len(), 9);
    let mid = &table[4];
    assert!((mid["mass"].as_f64().unwrap() - mass_curve(1.0, 1.2, hk2, 0.5)).abs() < 1e-12);

    assert_eq!(usot(&["oracle", "w2"]).status.code(), Some(2));
}

#[test]
fn wfr_masses_follow_the_mass_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
        "schema": "usot/1",
        "grid": {"dim": 1, "m": 64, "q": 32},
        "solver": {"alpha": 1.0, "beta": 4.0},
        "marginals": {
            "mu": {"kind": "gaussian", "center": [0.3, 0.0], "sigma": 0.05},
            "nu": {"kind": "gaussian", "center": [0.7, 0.0], "sigma": 0.05, "mass": 1.2}
        }
    }"#;
    let cfg = write_config(tmp.path(), body);
    let out = tmp.path().join("o");
    assert!(solve(&cfg, &out, &[]).status.success());
    let hk2 = hk_value(&cfg, &tmp.path().join("h"));
    for (_, t, m) in masses_csv(&out.join("masses.csv")) {
        assert!((m - mass_curve(1.0, 1.2, hk2, t)).abs() < 0.02, "t={t}: {m}");
    }
}

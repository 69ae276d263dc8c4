use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nlcontrol_cli::RunManifest;

fn nlcontrol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlcontrol"))
        .args(args)
        .output()
        .expect("launch cli")
}

fn run(verb: &str, dir: &Path, name: &str, toml: &str, extra: &[&str]) -> (Output, PathBuf) {
    let config = dir.join(format!("{name}.toml"));
    fs::write(&config, toml).unwrap();
    let out = dir.join(name);
    let mut args = vec![
        verb,
        "--quiet",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    (nlcontrol(&args), out)
}

fn manifest(out: &Path) -> RunManifest {
    RunManifest::load(&out.join("manifest.json")).unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn malformed_config_exits_1_without_output() {
    let dir = tempfile::tempdir().unwrap();
    for (i, toml) in [
        "[scheme]\ndx = 0.1\nfrobnicate = true\n",
        "[scheme\n",
        "[scheme]\ndx = 0.3\n",
        "[study]\nkind = \"gamma_minimizers\"\n",
    ]
    .iter()
    .enumerate()
    {
        let (output, out) = run("solve", dir.path(), &format!("bad{i}"), toml, &[]);
        assert_eq!(output.status.code(), Some(1), "{toml}");
        assert!(!out.exists(), "{toml} left {out:?}");
        assert!(!output.stderr.is_empty());
    }
    let err = nlcontrol(&["solve", "--config", "/nonexistent.toml", "--out", "x"]);
    assert_eq!(err.status.code(), Some(1));
}

#[test]
fn unknown_key_diagnostic_names_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let (output, _) = run(
        "solve",
        dir.path(),
        "bad",
        "[scheme]\ndx = 0.1\n\nfrobnicate = 1\n",
        &[],
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("frobnicate") && stderr.contains("line 4"),
        "{stderr}"
    );
}

#[test]
fn nonlocal_solve_below_one_cell_matches_local_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (a, local) = run("solve", dir.path(), "local", "[scheme]\ndx = 0.02\n", &[]);
    let (b, nonlocal) = run(
        "solve",
        dir.path(),
        "nonlocal",
        "[scheme]\ndx = 0.02\nH = 0.02\n",
        &[],
    );
    assert!(a.status.success() && b.status.success());
    let x = fs::read(local.join("trajectory.csv")).unwrap();
    let y = fs::read(nonlocal.join("trajectory.csv")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn zero_horizon_writes_a_single_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(
        "solve",
        dir.path(),
        "t0",
        "[scheme]\ndx = 0.1\nT = 0.0\ndt = 0.05\n",
        &[],
    );
    assert!(o.status.success());
    let rows = lines(&out.join("trajectory.csv"));
    assert_eq!(rows[0], "t,x,u");
    assert_eq!(rows.len(), 1 + 20);
    assert!(rows[1..].iter().all(|r| r.starts_with("0.00000e+00,")));
}

#[test]
fn store_every_flag_thins_the_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(
        "solve",
        dir.path(),
        "thin",
        "[scheme]\ndx = 0.1\n",
        &["--store-every", "2"],
    );
    assert!(o.status.success());
    // dt = 0.05, 5 steps: states 0, 2, 4 and the final one.
    assert_eq!(lines(&out.join("trajectory.csv")).len(), 1 + 4 * 20);
    assert_eq!(manifest(&out).config_echo["scheme"]["store_every"], 2);
}

#[test]
fn manifest_lists_exactly_the_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let toml = "[scheme]\ndx = 0.08\n[optimizer]\nmax_iterations = 5\n";
    let (o, out) = run("optimize", dir.path(), "opt", toml, &[]);
    assert!(o.status.success());
    let m = manifest(&out);
    assert_eq!(m.command, "optimize");
    assert_eq!(m.library_version, nlcontrol::VERSION);
    assert!(m.finished >= m.started);
    let on_disk: BTreeSet<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    let listed: BTreeSet<String> = m.artifacts.iter().cloned().collect();
    assert_eq!(on_disk, listed);
    assert_eq!(
        listed,
        ["history.csv", "minimizer.csv"].map(String::from).into()
    );
    assert_eq!(
        lines(&out.join("history.csv"))[0],
        "iter,value,optimality,step"
    );
    assert_eq!(lines(&out.join("minimizer.csv")).len(), 1 + 25);
    // Defaults are echoed resolved.
    let tol = m.config_echo["optimizer"]["step_tolerance"]
        .as_f64()
        .unwrap();
    assert!((tol - 0.08f64.powi(3)).abs() < 1e-15);
    assert_eq!(m.config_echo["initial"]["kind"], "initial_guess");

    // Reusing the directory for another command drops the old artifacts.
    let (o, _) = run("solve", dir.path(), "opt", "[scheme]\ndx = 0.1\n", &[]);
    assert!(o.status.success());
    assert!(!out.join("history.csv").exists());
    assert_eq!(manifest(&out).artifacts, vec!["trajectory.csv".to_string()]);
}

#[test]
fn optimize_tracks_a_reference_from_an_earlier_run() {
    let dir = tempfile::tempdir().unwrap();
    let (o, reference) = run(
        "solve",
        dir.path(),
        "ref",
        "[scheme]\ndx = 0.01\ndt = 0.005\n",
        &[],
    );
    assert!(o.status.success());
    let id = manifest(&reference).run_id;
    let path = reference.join("manifest.json");
    let toml = format!(
        "[scheme]\ndx = 0.04\ndt = 0.005\n[optimizer]\nmax_iterations = 30\n\
         [objective]\nreference = {{ source = \"run\", manifest = {:?}, run_id = {id:?} }}\n",
        path.to_str().unwrap()
    );
    let (o, out) = run("optimize", dir.path(), "opt", &toml, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = manifest(&out).summary;
    assert!(s["objective_value"].as_f64().unwrap() < s["initial_value"].as_f64().unwrap());

    let wrong = toml.replace(&id, "not-the-id");
    let (o, _) = run("optimize", dir.path(), "wrong", &wrong, &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn default_local_grid_convergence_has_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(
        "study",
        dir.path(),
        "gc",
        "[study]\nkind = \"grid_convergence_local\"\n",
        &[],
    );
    assert!(o.status.success());
    let rows = lines(&out.join("study_grid_convergence_local.csv"));
    assert_eq!(rows.len(), 1 + 4);
    assert!(rows[0]
        .starts_with("dx,H,l1_relative_error,objective_value,iterations,first_order_optimality"));
    let dx: Vec<&str> = rows[1..]
        .iter()
        .map(|r| r.split(',').next().unwrap())
        .collect();
    assert_eq!(
        dx,
        ["8.00000e-02", "4.00000e-02", "2.00000e-02", "1.00000e-02"]
    );
    assert!(rows[1..].iter().all(|r| r.ends_with(",ok")));
}

#[test]
fn nl2l_study_emits_its_error_curve() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(
        "study",
        dir.path(),
        "nl",
        "[study]\nkind = \"nl2l_solutions\"\n",
        &[],
    );
    assert!(o.status.success());
    let rows = lines(&out.join("fig_nl2l_solutions.csv"));
    assert_eq!(rows[0], "H,dx,sup_l1_error");
    assert_eq!(rows.last().unwrap(), "1.00000e-02,1.00000e-02,0.00000e+00");
}

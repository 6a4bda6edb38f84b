use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(root: &Path, cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnparabolic"))
        .args(args)
        .current_dir(cwd)
        .env("DNP_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(|s| s.to_string()).collect())
        .collect()
}

#[test]
fn zero_evolve_passes_with_zero_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "zero.toml",
        "scenario = \"evolve\"\noutput_dir = \"zero\"\n[domain]\nn = 16\n[scheme]\nhorizon = 0.1\nsteps = 10\n\
         [initial]\nkind = \"constant\"\nvalue = 0.0\n",
    );
    let out = run(tmp.path(), tmp.path(), &["run", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let dir = tmp.path().join("zero");
    for f in ["trajectory.csv", "series.csv", "summary.json", "config.echo.toml"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let series = csv_rows(&dir.join("series.csv"));
    assert_eq!(series.len(), 11);
    for row in &series {
        for v in &row[1..4] {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
    }
    let traj = csv_rows(&dir.join("trajectory.csv"));
    assert!(traj.iter().all(|r| r[1..].iter().all(|v| v.parse::<f64>().unwrap() == 0.0)));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("linf_bound PASS")), "{stdout}");
}

#[test]
fn config_errors_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "scenario = \"blowup\"\n[source]\nkind = \"zero\"\n");
    let out = run(tmp.path(), tmp.path(), &["run", &cfg]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3: source.kind"));
    let typo = write(tmp.path(), "typo.toml", "scenario = \"evolve\"\n[modle]\np = 3\n");
    assert_eq!(run(tmp.path(), tmp.path(), &["run", &typo]).status.code(), Some(4));
    assert_eq!(run(tmp.path(), tmp.path(), &["verify", "nonsense"]).status.code(), Some(4));
    let missing = tmp.path().join("missing.toml");
    assert_eq!(
        run(tmp.path(), tmp.path(), &["run", missing.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn check_and_solver_failures_have_their_own_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let strict = run(
        tmp.path(),
        tmp.path(),
        &["verify", "convergence", "--quick", "--override", "checks.ratio_limit=0.1"],
    );
    assert_eq!(strict.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&strict.stdout).contains("cauchy_ratio FAIL"));
    let starved = run(
        tmp.path(),
        tmp.path(),
        &["verify", "evolve", "--quick", "--override", "solver.max_inner=1"],
    );
    assert_eq!(starved.status.code(), Some(3));
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sweep.toml",
        "scenario = \"evolve\"\noutput_dir = \"sw\"\n[domain]\nn = 12\n[scheme]\nhorizon = 0.05\nsteps = 5\n\
         [sweep]\nkey = \"beta.m\"\nvalues = [1.25, 1.5, 2.0]\n",
    );
    let out = run(tmp.path(), tmp.path(), &["sweep", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let base = tmp.path().join("sw");
    let rows = csv_rows(&base.join("sweep_summary.csv"));
    assert_eq!(rows.len(), 3);
    for (row, m) in rows.iter().zip(["1.25", "1.5", "2.0"]) {
        assert_eq!(row[1], m);
        let echo = fs::read_to_string(base.join(&row[2]).join("config.echo.toml")).unwrap();
        assert!(echo.contains(&format!("m = {m}")), "{echo}");
        assert_eq!(row[3], "0");
    }
    let no_sweep = write(tmp.path(), "plain.toml", "scenario = \"evolve\"\n");
    assert_eq!(run(tmp.path(), tmp.path(), &["sweep", &no_sweep]).status.code(), Some(4));
}

#[test]
fn blowup_output_ends_at_blowup_time() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), tmp.path(), &["verify", "blowup", "--quick"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let dir = tmp.path().join("verify/blowup");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let t = summary["details"]["blown_up_at"].as_f64().unwrap();
    assert_eq!(summary["status"]["status"], "blown_up");
    let series = csv_rows(&dir.join("series.csv"));
    let last_t: f64 = series.last().unwrap()[0].parse().unwrap();
    assert_eq!(last_t, t);
    let threshold_exceeded: f64 = series.last().unwrap()[2].parse().unwrap();
    assert!(threshold_exceeded > 1e6);
}

#[test]
fn overrides_reach_the_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        tmp.path(),
        tmp.path(),
        &["verify", "evolve", "--quick", "--override", "domain.n=20", "--override", "seed=11"],
    );
    assert_eq!(out.status.code(), Some(0));
    let echo = fs::read_to_string(tmp.path().join("verify/evolve/config.echo.toml")).unwrap();
    assert!(echo.contains("n = 20") && echo.contains("seed = 11"), "{echo}");
    let traj = csv_rows(&tmp.path().join("verify/evolve/trajectory.csv"));
    assert_eq!(traj[0].len(), 21);
}

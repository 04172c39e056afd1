use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_intrahost"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_temp(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn running_text() -> String {
    std::fs::read_to_string(scenario("running.json")).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn analyze_running_example() {
    let o = run(&["analyze", scenario("running.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("x* = 10.0000"), "{out}");
    assert!(out.contains("R0 = 2.6667, T0 = 3.0000"), "{out}");
    assert!(out.contains("x = 3.3333, y = [1.3333]"), "{out}");
    assert!(out.contains("SCstab: holds"), "{out}");
    assert!(out.contains("prediction: ExclusionWinner{1}"), "{out}");
}

#[test]
fn analyze_clearance_variant() {
    let o = run(&["analyze", scenario("clearance.json").to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("Clearance (R0 = 0.7619 ≤ 1)"), "{}", stdout(&o));
    assert!(stdout(&o).contains("EE: none"));
}

#[test]
fn analyze_writes_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("report.json");
    let o = run(&[
        "analyze",
        scenario("two_strain.json").to_str().unwrap(),
        "--json",
        json.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["prediction"]["winner"], 1);
    assert_eq!(v["strains"][1]["strain"], 2);
    assert!((v["strains"][0]["t0"].as_f64().unwrap() - 4.8).abs() < 1e-12);
}

#[test]
fn malformed_json_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_temp(&dir, "bad.json", "{\n  \"model\": { \"k\": 1,, }\n}");
    let o = run(&["analyze", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2, column"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_temp(&dir, "typo.json", &running_text().replace("\"mu_m\"", "\"mu_mm\""));
    let o = run(&["analyze", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mu_mm"), "{}", stderr(&o));
}

#[test]
fn invalid_parameters_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_temp(
        &dir,
        "neg.json",
        &running_text().replace("\"beta\": 0.2", "\"beta\": -0.2"),
    );
    assert_eq!(run(&["analyze", p.to_str().unwrap()]).status.code(), Some(3));
    let p = write_temp(&dir, "n.json", &running_text().replace("\"n\": 1", "\"n\": 2"));
    assert_eq!(run(&["analyze", p.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn missing_file_exits_2() {
    assert_eq!(run(&["analyze", "/nonexistent/scenario.json"]).status.code(), Some(2));
}

#[test]
fn simulate_reaches_endemic_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let o = run(&[
        "simulate",
        scenario("running.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# scenario {"));
    assert_eq!(lines[1], "t,x,y_1_s1,g_s1,m_s1");
    assert!(lines.last().unwrap().starts_with("# event "));
    let rows = csv_rows(&text);
    let last = rows.last().unwrap();
    assert!((last[1] - 10.0 / 3.0).abs() < 1e-3);
    assert!((last[2] - 4.0 / 3.0).abs() < 1e-3);
    assert!((last[4] - 1.0).abs() < 1e-3);
}

#[test]
fn simulate_from_dfe_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let text = running_text().replacen(
        "\"model\"",
        "\"initial\": {\"x\": 10, \"strains\": [{\"y\": [0], \"g\": 0, \"m\": 0}]},\n  \"simulation\": {\"t_end\": 50, \"samples\": 10},\n  \"model\"",
        1,
    );
    let p = write_temp(&dir, "dfe.json", &text);
    let o = run(&["simulate", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert!(rows.len() >= 2);
    for r in &rows {
        assert_eq!(&r[1..], &[10.0, 0.0, 0.0, 0.0]);
    }
}

#[test]
fn zero_samples_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_temp(
        &dir,
        "s.json",
        &running_text().replacen("\"model\"", "\"simulation\": {\"samples\": 0}, \"model\"", 1),
    );
    assert_eq!(run(&["simulate", p.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn integrator_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_temp(
        &dir,
        "tight.json",
        &running_text().replacen(
            "\"model\"",
            "\"simulation\": {\"rtol\": 1e-30, \"atol\": 1e-300, \"t_end\": 10}, \"model\"",
            1,
        ),
    );
    let o = run(&["simulate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn simulate_is_deterministic() {
    let path = scenario("three_stage_logistic.json");
    let a = run(&["simulate", path.to_str().unwrap()]);
    let b = run(&["simulate", path.to_str().unwrap()]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn scenario_echo_reproduces_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("two_strain.json");
    let sim = run(&["simulate", path.to_str().unwrap()]);
    let echo = stdout(&sim)
        .lines()
        .next()
        .unwrap()
        .strip_prefix("# scenario ")
        .unwrap()
        .to_string();
    let p = write_temp(&dir, "echo.json", &echo);
    let original = run(&["analyze", path.to_str().unwrap()]);
    let again = run(&["analyze", p.to_str().unwrap()]);
    assert_eq!(stdout(&original), stdout(&again));
}

#[test]
fn verify_passes_on_clearance_and_exclusion() {
    for name in ["clearance.json", "two_strain.json", "running.json"] {
        let o = run(&["verify", scenario(name).to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}{}", stdout(&o), stderr(&o));
        assert!(stdout(&o).contains("PASS"));
    }
}

#[test]
fn verify_skips_invariant_face() {
    let o = run(&["verify", scenario("x_axis.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("invariant face"));
}

#[test]
fn verify_mismatch_exits_5_and_dumps_samples() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_temp(
        &dir,
        "short.json",
        &running_text().replacen("\"model\"", "\"simulation\": {\"t_end\": 5}, \"model\"", 1),
    );
    let o = run(&["verify", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("# V samples"));
    assert!(stdout(&o).contains("FAIL"));
}

fn sweep_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn sweep_r0_monotone_in_beta() {
    let o = run(&[
        "sweep",
        scenario("running.json").to_str().unwrap(),
        "--param",
        "strain1.beta",
        "--from",
        "0.01",
        "--to",
        "0.5",
        "--steps",
        "50",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = sweep_rows(&stdout(&o));
    assert_eq!(rows[0], ["strain1.beta", "R0_s1", "T0_s1", "prediction"]);
    assert_eq!(rows.len(), 51);
    let r0: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(r0.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(rows[1][3], "Clearance");
    assert_eq!(rows[50][3], "ExclusionWinner{1}");
}

#[test]
fn single_step_sweep_matches_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let path = scenario("two_strain.json");
    run(&["analyze", path.to_str().unwrap(), "--json", json.to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    let o = run(&[
        "sweep",
        path.to_str().unwrap(),
        "--param",
        "u",
        "--from",
        "1",
        "--to",
        "3",
        "--steps",
        "1",
    ]);
    let rows = sweep_rows(&stdout(&o));
    assert_eq!(rows.len(), 2);
    for i in 0..2 {
        let r0: f64 = rows[1][1 + i].parse().unwrap();
        let t0: f64 = rows[1][3 + i].parse().unwrap();
        assert_eq!(r0, report["strains"][i]["r0"].as_f64().unwrap());
        assert_eq!(t0, report["strains"][i]["t0"].as_f64().unwrap());
    }
    assert_eq!(rows[1][5], "ExclusionWinner{1}");
}

#[test]
fn sweep_unknown_path_exits_3() {
    let path = scenario("two_strain.json");
    for param in ["strain9.beta", "strain1.alphas[2]", "recruitment.K", "nonsense"] {
        let o = run(&[
            "sweep",
            path.to_str().unwrap(),
            "--param",
            param,
            "--from",
            "0",
            "--to",
            "1",
            "--steps",
            "3",
        ]);
        assert_eq!(o.status.code(), Some(3), "{param}");
    }
}

#[test]
fn sweep_with_simulation_reports_matches() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = bin()
        .env("INTRAHOST_THREADS", "2")
        .args([
            "sweep",
            scenario("running.json").to_str().unwrap(),
            "--param",
            "strain1.beta",
            "--from",
            "0.05",
            "--to",
            "0.3",
            "--steps",
            "4",
            "--simulate",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out).unwrap();
    let rows = sweep_rows(&text);
    assert_eq!(rows[0].last().unwrap(), "matched");
    assert!(rows[1..].iter().all(|r| r.last().unwrap() == "true"), "{text}");
    assert!(text.contains("# match rate 1"));
}

#[test]
fn bad_thread_count_exits_3() {
    let o = bin()
        .env("INTRAHOST_THREADS", "zero")
        .args(["analyze", scenario("running.json").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbsde-lab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn counterexample_run_reports_pathwise_violation_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["run", "counterexample", "--out", "rep"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("identity_2B,1,0.0000000000000000e0,"), "{out}");
    assert!(out.contains("identity_20B_violation[w2],1,1.0000000000000000e0,"), "{out}");
    let report = std::fs::read_to_string(dir.path().join("rep/counterexample.report.csv")).unwrap();
    assert!(report.starts_with("check,instances,worst,threshold,pass\n"));
    let sol = std::fs::read_to_string(dir.path().join("rep/counterexample.solution.csv")).unwrap();
    let first = sol.lines().nth(1).unwrap();
    assert!(first.starts_with("0,0.0000000000000000e0,0,w1;w2,3.0000000000000000e0,"), "{first}");
}

#[test]
fn empty_checks_write_solution_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"name": "bare", "model": "counterexample", "output": "out"}"#;
    std::fs::write(dir.path().join("bare.json"), cfg).unwrap();
    let o = lab(&["run", "bare.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let mut files: Vec<String> = std::fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["bare.solution.csv"]);
}

#[test]
fn config_errors_name_the_key_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"name": "bad", "model": {"binomial": {"steps": 3, "up": 1.1, "down": 0.9, "p": 0.5}}, "solver": {"picard": {"windows": "two"}}}"#;
    std::fs::write(dir.path().join("bad.json"), cfg).unwrap();
    let o = lab(&["run", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("solver.picard.windows"), "{}", stderr(&o));
}

#[test]
fn failed_assertion_exits_one_with_single_line_cause() {
    let dir = tempfile::tempdir().unwrap();
    // with L_0 = 4 above E xi = 3 a coarse penalty leaves Y_0 below the barrier
    let cfg = r#"{"name": "coarse", "model": "counterexample", "data": {"lower": [[4.0, 4.0], [0.0, 0.0], [0.0, 0.0]]}, "solver": {"penalization": {"n": 1.0, "m": 0.0}}, "checks": ["invariants"]}"#;
    std::fs::write(dir.path().join("coarse.json"), cfg).unwrap();
    let o = lab(&["run", "coarse.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("invariants"), "{err}");
}

#[test]
fn american_put_sweep_has_decreasing_error_column() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["sweep", "american-put-binomial", "--out", "."], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let errors: Vec<f64> = out
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with("wrote"))
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(errors.len(), 9);
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn list_contains_builtins_once() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["list"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    let scenarios: Vec<&str> = out.lines().skip(1).take_while(|l| l.starts_with(' ')).collect();
    assert_eq!(scenarios.len(), 5);
    for name in ["counterexample", "american-put-binomial", "two-barrier-random", "trinomial-game", "z-linear-binomial"] {
        assert_eq!(scenarios.iter().filter(|l| l.trim() == name).count(), 1, "{name}");
    }
}

#[test]
fn check_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_rbsde-lab"))
            .args(["check", "snell", "--seed", "9", "--instances", "20"])
            .env("RBSDE_LAB_THREADS", threads)
            .current_dir(dir.path())
            .output()
            .unwrap()
    };
    let a = run("1");
    let b = run("4");
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn bad_thread_count_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_rbsde-lab"))
        .args(["list"])
        .env("RBSDE_LAB_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("RBSDE_LAB_THREADS"));
}

#[test]
fn unknown_suite_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["check", "nonsense"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("suite"));
}

#[test]
fn explicit_space_file_is_loaded_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let space = r#"{"outcomes": [["up", 0.4], ["down", 0.6]], "times": [0.0, 1.0], "partitions": [[["up", "down"]], [["up"], ["down"]]]}"#;
    std::fs::write(dir.path().join("space.json"), space).unwrap();
    let cfg = r#"{"name": "tiny", "model": {"explicit": {"space": "space.json"}}, "data": {"xi": {"by_outcome": {"up": 2.0, "down": -1.0}}, "lower": 0.5}, "checks": ["invariants", "snell_oracle"]}"#;
    std::fs::write(dir.path().join("tiny.json"), cfg).unwrap();
    let o = lab(&["run", "tiny.json", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let sol = std::fs::read_to_string(dir.path().join("r/tiny.solution.csv")).unwrap();
    // E xi = 0.2, so the barrier 0.5 binds at time 0
    assert!(sol.lines().nth(1).unwrap().contains(",up;down,5.0000000000000000e-1,"), "{sol}");
}

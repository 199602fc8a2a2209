//! End-to-end checks of the binary: exit codes, output files, and
//! config-file merging.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cimeta::simulation::{DeltaLaw, Scenario};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cimeta"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// A small grid-shaped IPD file written through the library.
fn write_ipd(dir: &Path) -> PathBuf {
    let mut scenario = Scenario::new(3, DeltaLaw::StdNormal, 1, 10, 7);
    scenario.n_s = 60;
    scenario.n_0 = 200;
    let (data, _) = cimeta::gen_dataset(&scenario, 0).unwrap();
    let path = dir.join("ipd.csv");
    data.write_csv(&path).unwrap();
    path
}

#[test]
fn estimate_writes_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_ipd(dir.path());
    let out = run(
        &[
            "estimate",
            "--input",
            "ipd.csv",
            "--arms",
            "a",
            "--methods",
            "om,ipw,aipw",
            "--output-dir",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(
        exit_code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/estimates.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["per_study"].as_array().unwrap().len(), 9);
    assert_eq!(json["pooled"].as_array().unwrap().len(), 3);
    let csv = std::fs::read_to_string(dir.path().join("out/estimates.csv")).unwrap();
    assert!(csv.starts_with("# cimeta"));
    assert!(csv.contains("pooled,a,om"));
}

#[test]
fn malformed_csv_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "this,is\nnot,ipd\n").unwrap();
    let out = run(&["estimate", "--input", "bad.csv"], dir.path());
    assert_eq!(exit_code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing column"), "stderr: {stderr}");
}

#[test]
fn invalid_field_names_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.csv"),
        "subject_id,study,r,treatment,outcome,x1\n\
         t0,0,0,,,1.0\n\
         p0,1,1,a,oops,0.5\n\
         p1,1,1,b,1.0,0.25\n",
    )
    .unwrap();
    let out = run(&["estimate", "--input", "bad.csv"], dir.path());
    assert_eq!(exit_code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("row 2") && stderr.contains("outcome"),
        "stderr: {stderr}"
    );
}

#[test]
fn rank_deficient_trial_exits_two_and_names_the_study() {
    let dir = tempfile::tempdir().unwrap();
    // Study 2's covariates are collinear (x2 = 2 x1).
    let mut rows = vec!["subject_id,study,r,treatment,outcome,x1,x2".to_string()];
    for i in 0..6 {
        rows.push(format!("t{i},0,0,,,{},{}", i as f64 * 0.3, (i % 3) as f64));
    }
    for i in 0..12 {
        let arm = if i % 2 == 0 { "a" } else { "b" };
        rows.push(format!(
            "s1-{i},1,1,{arm},{},{},{}",
            i as f64 * 0.1,
            0.1 * i as f64,
            ((i * 7) % 5) as f64
        ));
    }
    for i in 0..12 {
        let arm = if i % 2 == 0 { "a" } else { "b" };
        let x = i as f64 * 0.25;
        rows.push(format!("s2-{i},2,1,{arm},{},{},{}", i as f64, x, 2.0 * x));
    }
    std::fs::write(dir.path().join("ipd.csv"), rows.join("\n") + "\n").unwrap();
    let out = run(
        &[
            "estimate",
            "--input",
            "ipd.csv",
            "--arms",
            "a",
            "--output-dir",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(
        exit_code(&out),
        2,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("study 2"), "stderr: {stderr}");
}

#[test]
fn predict_writes_three_intervals_and_gamma_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    write_ipd(dir.path());
    let out = run(
        &[
            "predict",
            "--input",
            "ipd.csv",
            "--arm",
            "a",
            "--methods",
            "mom,simple,wild",
            "--level",
            "0.95",
            "--b",
            "80",
            "--seed",
            "7",
            "--dump-draws",
            "--output-dir",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(
        exit_code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/intervals.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["intervals"].as_array().unwrap().len(), 3);
    assert!(json["gamma"]["gamma_hat_sq"].as_f64().unwrap() >= 0.0);
    assert!(dir.path().join("out/draws_simple.csv").exists());
    assert!(dir.path().join("out/draws_wild.csv").exists());
}

#[test]
fn predict_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_ipd(dir.path());
    let args = [
        "predict",
        "--input",
        "ipd.csv",
        "--arm",
        "a",
        "--methods",
        "mom,simple,wild",
        "--b",
        "60",
        "--seed",
        "9",
    ];
    let mut with_dir = args.to_vec();
    with_dir.extend(["--output-dir", "p1"]);
    assert_eq!(exit_code(&run(&with_dir, dir.path())), 0);
    let mut with_dir = args.to_vec();
    with_dir.extend(["--output-dir", "p2"]);
    assert_eq!(exit_code(&run(&with_dir, dir.path())), 0);
    for name in ["intervals.json", "intervals.csv"] {
        let a = std::fs::read(dir.path().join("p1").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("p2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn mom_with_two_studies_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = Scenario::new(2, DeltaLaw::StdNormal, 1, 10, 8);
    scenario.n_s = 40;
    scenario.n_0 = 100;
    let (data, _) = cimeta::gen_dataset(&scenario, 0).unwrap();
    data.write_csv(&dir.path().join("two.csv")).unwrap();
    let out = run(
        &[
            "predict",
            "--input",
            "two.csv",
            "--arm",
            "a",
            "--methods",
            "mom",
            "--b",
            "40",
            "--seed",
            "3",
        ],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("at least 3"), "stderr: {stderr}");
}

#[test]
fn gamma_reports_cov_matrix_and_c_terms() {
    let dir = tempfile::tempdir().unwrap();
    write_ipd(dir.path());
    let out = run(
        &[
            "gamma",
            "--input",
            "ipd.csv",
            "--arm",
            "a",
            "--method",
            "om",
            "--b",
            "80",
            "--seed",
            "5",
            "--output-dir",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(
        exit_code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/gamma.json")).unwrap())
            .unwrap();
    assert_eq!(json["gamma"]["c_terms"].as_array().unwrap().len(), 3);
    assert!(json["estimates"]["cov"]["data"].as_array().is_some());
}

#[test]
fn simulate_single_scenario_reports_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "simulate",
            "--m",
            "3",
            "--delta",
            "normal",
            "--reps",
            "12",
            "--b",
            "40",
            "--seed",
            "1",
            "--output-dir",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(
        exit_code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("out/coverage.csv")).unwrap();
    let data_rows = csv.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(data_rows, 5, "one row per method/construction");
}

#[test]
fn simulate_grid_emits_twenty_scenarios_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "simulate",
            "--grid",
            "--reps",
            "4",
            "--b",
            "30",
            "--seed",
            "1",
            "--methods",
            "mom",
            "--plot-data",
            "--output-dir",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(
        exit_code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("out/coverage.csv")).unwrap();
    let data_rows = csv.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(data_rows, 20, "20 scenarios x 1 method");
    let plot = std::fs::read_to_string(dir.path().join("out/plot_data.csv")).unwrap();
    let plot_rows = plot.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(plot_rows, 20);
}

#[test]
fn invalid_m_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["simulate", "--m", "1", "--delta", "normal", "--seed", "1"],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("m >= 2"), "stderr: {stderr}");
}

#[test]
fn predict_and_simulate_require_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    write_ipd(dir.path());
    let out = run(&["predict", "--input", "ipd.csv", "--arm", "a"], dir.path());
    assert_eq!(exit_code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    let out = run(&["simulate", "--m", "3", "--delta", "normal"], dir.path());
    assert_eq!(exit_code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    write_ipd(dir.path());
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"input": "ipd.csv", "arms": ["a"], "methods": ["om"], "output_dir": "from_config"}"#,
    )
    .unwrap();
    // Config alone.
    let out = run(&["estimate", "--config", "run.json"], dir.path());
    assert_eq!(
        exit_code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("from_config/estimates.json").exists());
    // Flag overrides the config's output directory.
    let out = run(
        &[
            "estimate",
            "--config",
            "run.json",
            "--output-dir",
            "cli_wins",
        ],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0);
    assert!(dir.path().join("cli_wins/estimates.json").exists());
}

#[test]
fn schema_sidecar_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("renamed.csv"),
        "id,grp,member,assigned,resp,age\n\
         t0,0,0,,,0.2\n\
         t1,0,0,,,0.9\n\
         t2,0,0,,,0.5\n\
         p0,1,1,x,1.0,0.1\n\
         p1,1,1,y,2.0,0.6\n\
         p2,1,1,x,1.5,0.8\n\
         p3,1,1,y,2.5,0.3\n\
         p4,1,1,x,1.2,0.55\n\
         p5,1,1,y,2.2,0.35\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("schema.json"),
        r#"{"subject_id": "id", "study": "grp", "r": "member", "treatment": "assigned",
            "outcome": "resp", "covariates": ["age"]}"#,
    )
    .unwrap();
    let out = run(
        &[
            "estimate",
            "--input",
            "renamed.csv",
            "--schema",
            "schema.json",
            "--arms",
            "x",
            "--output-dir",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(
        exit_code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn recorded_config_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    write_ipd(dir.path());
    let out = run(
        &[
            "predict",
            "--input",
            "ipd.csv",
            "--arm",
            "a",
            "--methods",
            "mom,simple",
            "--b",
            "50",
            "--seed",
            "11",
            "--output-dir",
            "orig",
        ],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0);
    // Extract the recorded config and replay the run from it alone.
    let doc: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("orig/intervals.json")).unwrap(),
    )
    .unwrap();
    std::fs::write(
        dir.path().join("replay.json"),
        serde_json::to_string(&doc["config"]).unwrap(),
    )
    .unwrap();
    let out = run(
        &[
            "predict",
            "--config",
            "replay.json",
            "--output-dir",
            "replay",
        ],
        dir.path(),
    );
    assert_eq!(
        exit_code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in ["intervals.json", "intervals.csv"] {
        let a = std::fs::read(dir.path().join("orig").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("replay").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs after config replay");
    }

    // Same exercise for a simulation report.
    let out = run(
        &[
            "simulate",
            "--m",
            "3",
            "--delta",
            "uniform",
            "--reps",
            "10",
            "--b",
            "40",
            "--seed",
            "4",
            "--output-dir",
            "sim",
        ],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0);
    let doc: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("sim/coverage.json")).unwrap(),
    )
    .unwrap();
    std::fs::write(
        dir.path().join("sim_replay.json"),
        serde_json::to_string(&doc["config"]).unwrap(),
    )
    .unwrap();
    let out = run(
        &[
            "simulate",
            "--config",
            "sim_replay.json",
            "--output-dir",
            "sim_replay",
        ],
        dir.path(),
    );
    assert_eq!(
        exit_code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in ["coverage.json", "coverage.csv"] {
        let a = std::fs::read(dir.path().join("sim").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("sim_replay").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs after config replay");
    }
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use policy_eval::cli::config::RunConfig;
use policy_eval::cli::io::read_dataset_file;
use policy_eval::experiments::simulate_replicate;
use policy_eval::inference::{evaluate, EvalOptions};
use policy_eval::EstimatorKind;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_policy-eval"));
    c.env_remove("POLICY_EVAL_WORKERS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stdout_json(out: &Output) -> Vec<Value> {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

const SMALL: &str = "replicates = 1\n[simulator]\nn = 4\nhorizon = 2\nseed = 5\n";

#[test]
fn simulate_shape() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("dataset_0000.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "agent_id,arm,index,treat_week,reward_t0,reward_t1");
    assert_eq!(lines.len(), 9);
    assert!(lines.iter().all(|l| l.split(',').count() == 6));
    assert!(lines[1..5].iter().all(|l| l.contains(",policy,")));
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.toml", "replicates = 2\n[simulator]\nn = 30\nhorizon = 3\nseed = 9\ncovariate_dim = 2\n");
    let mut files = Vec::new();
    for sub in ["a", "b"] {
        let d = dir.path().join(sub);
        let out = bin()
            .args(["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", d.to_str().unwrap()])
            .env("POLICY_EVAL_WORKERS", if sub == "a" { "1" } else { "3" })
            .output()
            .unwrap();
        assert!(out.status.success());
        files.push(std::fs::read(d.join("dataset_0001.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn estimate_roundtrip_matches_in_process() {
    let dir = TempDir::new().unwrap();
    let text = "replicates = 1\n[simulator]\nn = 200\nhorizon = 4\nseed = 21\ncovariate_dim = 1\n";
    let cfg = write(dir.path(), "run.toml", text);
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]).status.success());
    let csv = dir.path().join("dataset_0000.csv");

    let plan = RunConfig::parse(text).unwrap().to_plan().unwrap();
    let data = simulate_replicate(&plan, 0).unwrap();
    assert_eq!(read_dataset_file(&csv, None).unwrap().policy_arm(), data.policy_arm());

    let kinds = ["base", "subgroup", "threshold", "hybrid", "regression_base", "regression_subgroup"];
    let mut args = vec!["estimate", "--data", csv.to_str().unwrap(), "--full-precision"];
    for k in &kinds {
        args.extend(["--estimator", k]);
    }
    let got = stdout_json(&run(&args));
    for (k, v) in kinds.iter().zip(&got) {
        let want = evaluate(&data, EstimatorKind::parse(k).unwrap(), None, &EvalOptions::default()).unwrap();
        assert!((v["point"].as_f64().unwrap() - want.point).abs() <= 1e-12, "{k}");
        assert!((v["ci_low"].as_f64().unwrap() - want.ci_low.unwrap()).abs() <= 1e-12, "{k}");
        assert!((v["variance"].as_f64().unwrap() - want.variance.unwrap()).abs() <= 1e-12, "{k}");
    }
}

const HAND: &str = "agent_id,arm,index,treat_week,reward_t0\n\
                    0,policy,0.1,1,7\n\
                    1,policy,0.9,0,3\n\
                    0,control,0.2,0,4\n\
                    1,control,0.8,0,6\n";

#[test]
fn estimate_hand_example() {
    let dir = TempDir::new().unwrap();
    let csv = write(dir.path(), "hand.csv", HAND);
    let got = stdout_json(&run(&["estimate", "--data", csv.to_str().unwrap(), "--estimator", "subgroup", "--level", "0.95"]));
    assert_eq!(got[0]["point"].as_f64(), Some(3.0));
    assert_eq!(got[0]["estimator"], "subgroup");
}

#[test]
fn truncate_at_horizon_and_hybrid_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.toml", "replicates = 1\n[simulator]\nn = 300\nhorizon = 3\nseed = 2\n");
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]).status.success());
    let csv = dir.path().join("dataset_0000.csv");
    let data = csv.to_str().unwrap();
    let plain = stdout_json(&run(&["estimate", "--data", data]));
    let trunc = stdout_json(&run(&["estimate", "--data", data, "--truncate", "3"]));
    assert_eq!(plain, trunc);
    let sg = stdout_json(&run(&["estimate", "--data", data, "--estimator", "subgroup"]));
    let hyb = stdout_json(&run(&["estimate", "--data", data, "--estimator", "hybrid", "--weight", "0"]));
    assert_eq!(sg[0]["point"], hyb[0]["point"]);
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn exit_code_malformed_csv() {
    let dir = TempDir::new().unwrap();
    let csv = write(dir.path(), "bad.csv", "agent_id,arm,index,treat_week,reward_t0\n0,policy,0.1,1,7\n1,policy,x,0,3\n");
    let out = run(&["estimate", "--data", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error:"));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn exit_code_invariant() {
    let dir = TempDir::new().unwrap();
    let csv = write(dir.path(), "short.csv", "agent_id,arm,index,treat_week,reward_t0\n0,policy,0.1,1,7\n1,policy,0.2,0,3\n0,control,0.2,0,4\n");
    let out = run(&["estimate", "--data", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("arms have equal length"), "{}", stderr(&out));
}

#[test]
fn exit_code_numerical() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("agent_id,arm,index,treat_week,reward_t0\n");
    for arm in ["policy", "control"] {
        for i in 0..10 {
            let w = u32::from(arm == "policy" && i < 5);
            text.push_str(&format!("{i},{arm},{},{w},1\n", i as f64 / 10.0));
        }
    }
    let csv = write(dir.path(), "flat.csv", &text);
    let out = run(&["estimate", "--data", csv.to_str().unwrap(), "--estimator", "hybrid"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn exit_code_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.toml", "replicates = 1\nreplicate = 2\n");
    let out = run(&["coverage", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error:"));
    assert_eq!(run(&["estimate", "--data", "/nonexistent/x.csv"]).status.code(), Some(2));
    assert_eq!(run(&["estimate"]).status.code(), Some(2));
}

#[test]
fn bad_pool_row_exit_3() {
    let dir = TempDir::new().unwrap();
    let pool = write(
        dir.path(),
        "pool.csv",
        "t0_00,t0_01,t0_10,t0_11,t1_00,t1_01,t1_10,t1_11\n0.7,0.3,0.2,0.8,0.5,0.5,0.1,0.9\n0.7,0.8,0.2,0.8,0.5,0.5,0.1,0.9\n",
    );
    let cfg = write(
        dir.path(),
        "run.toml",
        &format!("replicates = 1\n[simulator]\ndomain = \"ingested\"\nn = 10\n[pools]\ntransitions = {:?}\n", pool.to_str().unwrap()),
    );
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("row 2"), "{}", stderr(&out));
}

#[test]
fn coverage_single_replicate() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "replicates = 1\nestimand_reps = 20\n[simulator]\nn = 100\nhorizon = 3\n",
    );
    let json = dir.path().join("plot.json");
    let out = run(&["coverage", "--config", cfg.to_str().unwrap(), "--out-json", json.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["estimator", "below", "covered", "above", "mean_half_width", "estimand", "replicates"]
    );
    for rec in rdr.records() {
        let covered: f64 = rec.unwrap()[2].parse().unwrap();
        assert!(covered == 0.0 || covered == 1.0);
    }
    let plot: Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(plot["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_row_count() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "replicates = 3\nestimand_reps = 10\nestimators = [\"base\", \"subgroup\", \"threshold\"]\n\
         [simulator]\nn = 100\nhorizon = 3\n[sweep]\naxis = \"alpha\"\nvalues = [0.1, 0.2]\n",
    );
    let csv_path = dir.path().join("sweep.csv");
    let json = dir.path().join("sweep.json");
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out-csv",
        csv_path.to_str().unwrap(),
        "--out-json",
        json.to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(csv_path).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    assert!(text.starts_with("axis,value,estimator"));
    let plot: Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(plot["series"][0]["x"], serde_json::json!([0.1, 0.2]));

    let plain = write(dir.path(), "plain.toml", "replicates = 1\n");
    assert_eq!(run(&["sweep", "--config", plain.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn compare_two_reports() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.toml", "replicates = 2\n[simulator]\nn = 200\nhorizon = 3\n");
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]).status.success());
    let mut reports = Vec::new();
    for r in 0..2 {
        let csv = dir.path().join(format!("dataset_{r:04}.csv"));
        let out = run(&["estimate", "--data", csv.to_str().unwrap(), "--estimator", "subgroup"]);
        assert!(out.status.success());
        reports.push(write(dir.path(), &format!("r{r}.json"), &String::from_utf8(out.stdout).unwrap()));
    }
    let got = stdout_json(&run(&["compare", reports[0].to_str().unwrap(), reports[1].to_str().unwrap()]));
    let c = &got[0];
    assert!(c["ci_low"].as_f64().unwrap() <= c["difference"].as_f64().unwrap());
    assert!(c["difference"].as_f64().unwrap() <= c["ci_high"].as_f64().unwrap());
}

#[test]
fn corner_case_command() {
    let got = stdout_json(&run(&["corner-case", "--n", "100", "--replicates", "20", "--seed", "4"]));
    let rows = got[0]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(got[0]["estimand"]["value"], 1.0);
}

mod common;

use std::fs;
use std::path::Path;

use common::{bbaudit, bbaudit_env, fixtures, per_input, serve};
use serde_json::Value as Json;

fn parity_config(rate_a: f64, rate_b: f64, per_group: usize, method: &str, significance: &str) -> String {
    format!(
        r#"[model.synthetic]
threshold = 0.1
[model.synthetic.kind]
kind = "group_threshold"
rate_a = {rate_a}
rate_b = {rate_b}

[sampling]
n = {n}
[sampling.strategy]
kind = "stratified"
quotas = {{ G1 = {per_group}, G2 = {per_group} }}

[audit]
presumption = "compliance"
significance = {significance}
method = "{method}"
seed = 3
[audit.criterion]
type = "statistical_parity"
group_a = "G1"
group_b = "G2"
threshold = 0.1
[audit.assumptions]
family = "zoo"
distribution = {{}}
"#,
        n = 2 * per_group
    )
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn compliant_model_completes_with_fail_to_reject() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &parity_config(0.5, 0.5, 100, "exact_binomial_boundary", "0.05"));
    let o = bbaudit(&["run", "--config", &cfg, "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Json = serde_json::from_slice(&fs::read(dir.path().join("audit.json")).unwrap()).unwrap();
    assert_eq!(report["result"]["status"], "completed");
    assert_eq!(report["result"]["decision"], "fail_to_reject");
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert!(report["result"]["disclosure"]["null_hypothesis"].is_string());
    assert!(dir.path().join("audit.md").exists());
    assert!(dir.path().join("audit.evidence.jsonl").exists());
    // stdout carries the same report
    assert_eq!(o.stdout, fs::read(dir.path().join("audit.json")).unwrap());
}

#[test]
fn out_of_range_significance_exits_two_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &parity_config(0.5, 0.5, 100, "exact_binomial_boundary", "1.5"));
    let o = bbaudit(&["run", "--config", &cfg, "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("significance"), "{}", stderr(&o));
    assert!(!dir.path().join("audit.json").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let body = parity_config(0.5, 0.5, 100, "exact_binomial_boundary", "0.05").replace("seed = 3", "seed = 3\nsignificnce = 0.01");
    let cfg = write(dir.path(), "run.toml", &body);
    let o = bbaudit(&["run", "--config", &cfg, "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("significnce"), "{}", stderr(&o));
}

#[test]
fn small_groups_are_refused_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &parity_config(0.5, 0.5, 10, "boundary_z", "0.05"));
    let o = bbaudit(&["run", "--config", &cfg, "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let report: Json = serde_json::from_slice(&fs::read(dir.path().join("audit.json")).unwrap()).unwrap();
    assert_eq!(report["result"]["status"], "refused");
    assert!(report["result"]["recommended_n"].as_u64().unwrap() >= 30);
}

#[test]
fn seed_flag_changes_the_evidence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &parity_config(0.6, 0.5, 100, "exact_binomial_boundary", "0.05"));
    let a = bbaudit(&["run", "--config", &cfg, "--out-dir", s(&dir.path().join("a")), "--seed", "1"]);
    let b = bbaudit(&["run", "--config", &cfg, "--out-dir", s(&dir.path().join("b")), "--seed", "2"]);
    assert_eq!((a.status.code(), b.status.code()), (Some(0), Some(0)));
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn remote_run_records_non_replayable_evidence() {
    let (url, _) = serve(per_input(|x| serde_json::json!(if x["group"] == "G1" { 1 } else { 0 })));
    let dir = tempfile::tempdir().unwrap();
    let body = parity_config(0.5, 0.5, 40, "exact_binomial_boundary", "0.05").replace(
        "[model.synthetic]\nthreshold = 0.1\n[model.synthetic.kind]\nkind = \"group_threshold\"\nrate_a = 0.5\nrate_b = 0.5\n",
        &format!(
            "[model.remote]\nurl = \"{url}\"\ndeterministic = true\nschema = {{ groups = [\"G1\", \"G2\"] }}\noutput = {{ kind = \"binary\" }}\n"
        ),
    );
    let cfg = write(dir.path(), "run.toml", &body);
    let o = bbaudit_env(&["run", "--config", &cfg, "--out-dir", s(dir.path())], &[("BBAUDIT_TOKEN", "t")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Json = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["result"]["disclosure"]["source"]["replayable"], false);
    assert_eq!(report["result"]["decision"], "reject_null");
}

#[test]
fn unreachable_remote_exits_two() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let dir = tempfile::tempdir().unwrap();
    let body = parity_config(0.5, 0.5, 40, "exact_binomial_boundary", "0.05").replace(
        "[model.synthetic]\nthreshold = 0.1\n[model.synthetic.kind]\nkind = \"group_threshold\"\nrate_a = 0.5\nrate_b = 0.5\n",
        &format!("[model.remote]\nurl = \"{url}\"\nschema = {{ groups = [\"G1\", \"G2\"] }}\noutput = {{ kind = \"binary\" }}\n"),
    );
    let cfg = write(dir.path(), "run.toml", &body);
    let o = bbaudit(&["run", "--config", &cfg, "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("transport"), "{}", stderr(&o));
}

fn power_config(grid: &[f64], remote: bool) -> String {
    let mut out = String::from(
        r#"n_per_group = 100
trials = 400
seed = 9

[audit]
presumption = "compliance"
significance = 0.05
method = "boundary_z"
[audit.criterion]
type = "statistical_parity"
group_a = "G1"
group_b = "G2"
threshold = 0.1
[audit.assumptions]
family = "zoo"
distribution = {}
"#,
    );
    for gap in grid {
        out.push_str(&format!(
            "\n[[grid]]\nthreshold = 0.1\nkind = {{ kind = \"group_threshold\", rate_a = {}, rate_b = 0.4 }}\n",
            0.4 + gap
        ));
    }
    if remote {
        out.push_str("\n[model.remote]\nurl = \"http://127.0.0.1:9\"\nschema = {}\noutput = { kind = \"binary\" }\n");
    }
    out
}

#[test]
fn power_refuses_remote_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "power.toml", &power_config(&[0.0], true));
    let o = bbaudit(&["power", "--config", &cfg, "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ground truth"), "{}", stderr(&o));
}

#[test]
fn single_compliant_point_has_only_a_false_positive_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "power.toml", &power_config(&[0.0], false));
    let o = bbaudit(&["power", "--config", &cfg, "--out-dir", s(dir.path()), "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    let cols: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cols[2], "true");
    assert!(!cols[5].is_empty() && cols[7].is_empty());
}

#[test]
fn power_grows_with_the_gap_and_size_is_held() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "power.toml", &power_config(&[0.0, 0.1, 0.3], false));
    let o = bbaudit(&["power", "--config", &cfg, "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t: Json = serde_json::from_slice(&fs::read(dir.path().join("power.json")).unwrap()).unwrap();
    let rows = t["rows"].as_array().unwrap();
    let rate = |r: &Json| r["estimate"]["rejections"].as_f64().unwrap() / r["estimate"]["trials"].as_f64().unwrap();
    let se = |p: f64| (p * (1.0 - p) / 400.0f64).sqrt().max(1e-3);
    let r: Vec<f64> = rows.iter().map(rate).collect();
    assert!(r[0] <= 0.05 + 3.0 * se(0.05), "{r:?}");
    assert!(r[0] <= r[1] + 3.0 * se(r[1]) && r[1] <= r[2] + 3.0 * se(r[2]), "{r:?}");
    assert!(r[2] > 0.9, "{r:?}");
    assert!(dir.path().join("power.csv").exists());
}

#[test]
fn power_rejects_too_few_trials() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "power.toml", &power_config(&[0.0], false).replace("trials = 400", "trials = 10"));
    let o = bbaudit(&["power", "--config", &cfg, "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_flags_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.toml", "trials = 200\nn_per_group = 60\ngaps = [0.0, 0.3]\nmethods = [\"exact_binomial_boundary\"]\n");
    let o = bbaudit(&["simulate", "--config", &cfg, "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: Json = serde_json::from_slice(&o.stdout).unwrap();
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["calibrated"], true);
    assert!(rows[1].get("calibrated").is_none());
    assert!(dir.path().join("simulate.csv").exists());
}

#[test]
fn header_only_history_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "h.csv", "applicant_id,job_category,race_ethnicity,sex,demographics_source,selected,score\n");
    let cfg = fixtures().join("ll144.toml");
    let o = bbaudit(&["ll144", "--config", s(&cfg), "--data", &data, "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no usable records"), "{}", stderr(&o));
}

#[test]
fn missing_columns_exit_two_with_names() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "h.csv", "applicant_id,job_category,sex,selected\nx,eng,F,1\n");
    let cfg = fixtures().join("ll144.toml");
    let o = bbaudit(&["ll144", "--config", s(&cfg), "--data", &data, "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("race_ethnicity") && e.contains("demographics_source") && e.contains("score"), "{e}");
}

#[test]
fn strict_mode_refuses_quarantined_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("ll144.toml");
    let o = bbaudit(&["ll144", "--config", s(&cfg), "--out-dir", s(dir.path()), "--strict"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 21"), "{}", stderr(&o));
}

#[test]
fn test_data_without_a_model_falls_back_to_insufficient_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("ll144_test_data_no_model.toml");
    let o = bbaudit(&["ll144", "--config", s(&cfg), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s: Json = serde_json::from_slice(&o.stdout).unwrap();
    assert!(s.get("test_data").is_none());
    let cells = s["job_categories"][0]["metrics"]["tables"][2]["cells"].as_array().unwrap();
    assert!(cells.iter().any(|c| c["status"] == "insufficient data"));
    assert!(s["notes"].as_array().unwrap().iter().any(|n| n.as_str().unwrap().contains("no model was configured")));
}

#[test]
fn test_data_is_generated_from_a_configured_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = fs::read_to_string(fixtures().join("ll144_test_data_no_model.toml")).unwrap();
    body = body.replace(
        "data = \"ll144_history.csv\"\n",
        &format!(
            "data = \"{}\"\n\n[model.synthetic]\nthreshold = 0.2\nkind = {{ kind = \"group_threshold\", rate_a = 0.7, rate_b = 0.6 }}\n",
            fixtures().join("ll144_history.csv").display()
        ),
    );
    let cfg = write(dir.path(), "ll.toml", &body);
    let o = bbaudit(&["ll144", "--config", &cfg, "--out-dir", s(dir.path()), "--format", "markdown"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let md = String::from_utf8(o.stdout).unwrap();
    assert!(md.contains("## Test data"));
    assert!(md.contains("Stratum G1: 200"));
    let j: Json = serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(j["test_data"]["n"], 400);
    assert_eq!(j["job_categories"][1]["data"], "test data");
}

#[test]
fn ll144_csv_lists_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("ll144.toml");
    let o = bbaudit(&["ll144", "--config", s(&cfg), "--out-dir", s(dir.path()), "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("job_category,data,table,category,count"));
    // 3 race + 2 sex + 6 intersection cells
    assert_eq!(csv.lines().count(), 1 + 11);
}

#[test]
fn zero_workers_is_a_configuration_error() {
    let o = bbaudit(&["simulate", "--workers", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

//! Report renderings for the CLI commands.

use std::fmt::Write;

use serde::Serialize;

use super::{CliError, SimulateConfig};
use crate::blackbox::SyntheticModelSpec;
use crate::criteria::{ComplianceCriterion, StatisticalParity};
use crate::evidence::DistributionSpec;
use crate::ll144::BiasAuditSummary;
use crate::seed::derive;
use crate::testing::{
    analytic_power, estimate_operating_characteristics, AuditResult, AuditSpec, Decision, ModelAssumptions,
    PowerEstimate, Presumption, TestMethod,
};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn decision(d: Decision) -> &'static str {
    match d {
        Decision::RejectNull => "reject_null",
        Decision::FailToReject => "fail_to_reject",
    }
}

pub fn run_markdown(result: &AuditResult, hash: &str, seed: u64) -> String {
    let d = result.disclosure();
    let mut out = String::from("# Audit report\n\n");
    match result {
        AuditResult::Completed(o) => {
            let _ = writeln!(out, "**{}**\n", o.statement);
            let _ = writeln!(out, "- Decision: {}", decision(o.decision));
            let _ = writeln!(out, "- p-value: {}", o.p_value.map_or("none".into(), |p| format!("{p:.6}")));
            let _ = writeln!(
                out,
                "- Estimate of g: {:.6}{} ({} records)",
                o.estimate.g_hat,
                if o.estimate.lower_bound { " (lower bound)" } else { "" },
                o.estimate.n
            );
            for g in &o.estimate.groups {
                let _ = writeln!(out, "- Group {}: {}/{} selected (rate {:.4})", g.group, g.selected, g.total, g.rate);
            }
            if let Some(ci) = &o.confidence_interval {
                let _ = writeln!(out, "- {:.0}% interval for {}: [{:.6}, {:.6}]", ci.level * 100.0, ci.target, ci.lower, ci.upper);
            }
        }
        AuditResult::Refused(r) => {
            let _ = writeln!(out, "**Audit refused:** {}\n", r.reason);
            if let Some(n) = r.recommended_n {
                let _ = writeln!(out, "- Recommended sample size: {n}");
            }
        }
    }
    out.push_str("\n## Disclosure\n\n");
    let _ = writeln!(out, "- Presumption: {:?} ({})", d.presumption, d.null_hypothesis);
    let _ = writeln!(out, "- Significance: {}", d.significance);
    let _ = writeln!(out, "- Method: {:?}", d.method);
    let _ = writeln!(out, "- Procedure: {}", d.procedure);
    let _ = writeln!(out, "- Input distribution: {}", serde_json::to_string(&d.assumptions.distribution).expect("serializes"));
    let _ = writeln!(out, "- Model family: {}", d.assumptions.family);
    let _ = writeln!(out, "- Evidence: {} records, strategy {}, truncated: {}", d.n, d.source.strategy, d.truncated);
    let _ = writeln!(out, "- Audited object: {} (replayable: {})", d.source.model_identity, d.source.replayable);
    let _ = writeln!(out, "- Anomalous responses: {}", d.source.anomalies);
    for e in &d.source.exclusions {
        let _ = writeln!(out, "- Exclusion: {e}");
    }
    for n in &d.notes {
        let _ = writeln!(out, "- Note: {n}");
    }
    let _ = writeln!(out, "- Seed: {seed}");
    let _ = writeln!(out, "- Configuration hash (sha256): {hash}");
    out
}

pub fn run_csv(result: &AuditResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["status", "decision", "p_value", "g_hat", "n", "presumption", "significance", "method"])
        .expect("in-memory write");
    let d = result.disclosure();
    let (status, dec, p, g) = match result {
        AuditResult::Completed(o) => ("completed", decision(o.decision), opt(o.p_value), o.estimate.g_hat.to_string()),
        AuditResult::Refused(_) => ("refused", "", String::new(), String::new()),
    };
    w.write_record([
        status.to_string(),
        dec.to_string(),
        p,
        g,
        d.n.to_string(),
        format!("{:?}", d.presumption),
        d.significance.to_string(),
        format!("{:?}", d.method),
    ])
    .expect("in-memory write");
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Serialize)]
pub struct PowerRow {
    pub point: usize,
    pub model: SyntheticModelSpec,
    pub estimate: PowerEstimate,
}

#[derive(Debug, Serialize)]
pub struct PowerTable {
    pub schema_version: u32,
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub n_per_group: usize,
    pub audit: AuditSpec,
    pub rows: Vec<PowerRow>,
}

pub fn power_csv(rows: &[PowerRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["point", "ground_truth_g", "null_true", "trials", "rejections", "fpr_hat", "fpr_se", "tpr_hat", "tpr_se"])
        .expect("in-memory write");
    for r in rows {
        let e = &r.estimate;
        w.write_record([
            r.point.to_string(),
            e.ground_truth_g.to_string(),
            e.null_true.to_string(),
            e.trials.to_string(),
            e.rejections.to_string(),
            opt(e.fpr_hat),
            opt(e.fpr_se),
            opt(e.tpr_hat),
            opt(e.tpr_se),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn power_markdown(t: &PowerTable) -> String {
    let mut out = String::from("# Operating characteristics\n\n");
    let _ = writeln!(
        out,
        "Presumption {:?}, significance {}, method {:?}, {} per group, seed {}, configuration hash {}\n",
        t.audit.presumption, t.audit.significance, t.audit.method, t.n_per_group, t.seed, t.config_hash
    );
    out.push_str("| Point | g | Null true | FPR | TPR | SE |\n|---|---|---|---|---|---|\n");
    for r in &t.rows {
        let e = &r.estimate;
        let _ = writeln!(
            out,
            "| {} | {:.4} | {} | {} | {} | {:.4} |",
            r.point,
            e.ground_truth_g,
            e.null_true,
            e.fpr_hat.map_or("".into(), |x| format!("{x:.4}")),
            e.tpr_hat.map_or("".into(), |x| format!("{x:.4}")),
            e.standard_error()
        );
    }
    out
}

#[derive(Debug, Serialize)]
pub struct SimulateRow {
    pub method: TestMethod,
    pub gap: f64,
    pub ground_truth_g: f64,
    pub null_true: bool,
    pub rejection_rate: f64,
    pub standard_error: f64,
    /// Normal-approximation power, under presumption of compliance only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic_power: Option<f64>,
    /// For null-true rows: rejection rate within `zeta + 3 se`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibrated: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub schema_version: u32,
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub seed: u64,
    pub settings: SimulateConfig,
    pub rows: Vec<SimulateRow>,
}

pub fn simulate(cfg: &SimulateConfig, seed: u64, hash: Option<String>) -> Result<SimulateReport, CliError> {
    let mut rows = Vec::new();
    for (m, &method) in cfg.methods.iter().enumerate() {
        for (g, &gap) in cfg.gaps.iter().enumerate() {
            let model = SyntheticModelSpec::group_threshold(cfg.base_rate + gap, cfg.base_rate, cfg.threshold);
            let spec = AuditSpec {
                criterion: ComplianceCriterion::StatisticalParity(StatisticalParity {
                    group_a: "G1".into(),
                    group_b: "G2".into(),
                    threshold: cfg.threshold,
                }),
                presumption: cfg.presumption,
                significance: cfg.significance,
                method,
                assumptions: ModelAssumptions {
                    distribution: DistributionSpec::default(),
                    family: "group-threshold zoo model".into(),
                    tags: vec!["simulate".into()],
                },
                bootstrap_resamples: 2000,
                seed: 0,
                planning_gap: None,
                target_power: 0.8,
            };
            let point_seed = derive(derive(seed, m as u64), g as u64);
            let e = estimate_operating_characteristics(&spec, &model, cfg.n_per_group, cfg.trials, point_seed)?;
            let rate = e.rejection_rate();
            let se = e.standard_error();
            let n = cfg.n_per_group as u64;
            rows.push(SimulateRow {
                method,
                gap,
                ground_truth_g: e.ground_truth_g,
                null_true: e.null_true,
                rejection_rate: rate,
                standard_error: se,
                analytic_power: (cfg.presumption == Presumption::Compliance).then(|| {
                    analytic_power(cfg.base_rate + gap, cfg.base_rate, n, n, cfg.threshold, cfg.significance)
                }),
                calibrated: e.null_true.then_some(rate <= cfg.significance + 3.0 * se),
            });
        }
    }
    Ok(SimulateReport { schema_version: 1, command: "simulate", config_hash: hash, seed, settings: cfg.clone(), rows })
}

pub fn simulate_csv(r: &SimulateReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "gap", "ground_truth_g", "null_true", "rejection_rate", "standard_error", "analytic_power", "calibrated"])
        .expect("in-memory write");
    for row in &r.rows {
        w.write_record([
            format!("{:?}", row.method),
            row.gap.to_string(),
            row.ground_truth_g.to_string(),
            row.null_true.to_string(),
            row.rejection_rate.to_string(),
            row.standard_error.to_string(),
            opt(row.analytic_power),
            row.calibrated.map(|c| c.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn simulate_markdown(r: &SimulateReport) -> String {
    let mut out = String::from("# Zoo calibration\n\n");
    let _ = writeln!(
        out,
        "Threshold {}, significance {}, {} per group, {} trials per point, seed {}\n",
        r.settings.threshold, r.settings.significance, r.settings.n_per_group, r.settings.trials, r.seed
    );
    out.push_str("| Method | Gap | g | Null true | Rejection rate | SE | Analytic power | Calibrated |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for row in &r.rows {
        let _ = writeln!(
            out,
            "| {:?} | {} | {:.4} | {} | {:.4} | {:.4} | {} | {} |",
            row.method,
            row.gap,
            row.ground_truth_g,
            row.null_true,
            row.rejection_rate,
            row.standard_error,
            row.analytic_power.map_or("".into(), |p| format!("{p:.4}")),
            row.calibrated.map_or("".into(), |c| c.to_string())
        );
    }
    out
}

/// All metric tables of a summary, prefixed with the job category.
pub fn ll144_csv(s: &BiasAuditSummary) -> String {
    let mut out = String::new();
    let mut header_done = false;
    for job in &s.job_categories {
        let body = job.metrics.to_csv();
        let mut lines = body.lines();
        let header = lines.next().unwrap_or_default();
        if !header_done {
            let _ = writeln!(out, "job_category,data,{header}");
            header_done = true;
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([&job.job_category, &job.data]).expect("in-memory write");
        let prefix = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
        for line in lines {
            let _ = writeln!(out, "{},{line}", prefix.trim_end());
        }
    }
    out
}

//! Markdown rendering of the public bias-audit summary.

use std::fmt::Write;

use super::{BiasAuditSummary, JobCategoryAudit};
use crate::testing::{AuditResult, Decision};

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn decision(d: Decision) -> &'static str {
    match d {
        Decision::RejectNull => "reject",
        Decision::FailToReject => "fail to reject",
    }
}

fn job_section(out: &mut String, job: &JobCategoryAudit) {
    let _ = writeln!(out, "## Job category: {} ({})\n", job.job_category, job.data);
    let _ = writeln!(out, "Records analysed: {}\n", job.rows);
    for t in &job.metrics.tables {
        let _ = writeln!(out, "### {}\n", t.axis);
        if let Some(m) = t.pooled_median_score {
            let _ = writeln!(out, "Median score of the job category: {m:.4}\n");
        }
        out.push_str("| Category | Count | Selection rate | Selection impact ratio | Scoring rate | Scoring impact ratio | Status |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for c in &t.cells {
            let sel = c.selection.as_ref();
            let sco = c.scoring.as_ref();
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                c.category,
                c.count,
                opt(sel.map(|s| s.rate)),
                opt(sel.and_then(|s| s.impact_ratio)),
                opt(sco.map(|s| s.rate)),
                opt(sco.and_then(|s| s.impact_ratio)),
                c.status
            );
        }
        out.push('\n');
    }
    if !job.tests.is_empty() {
        out.push_str("### Tests against the highest-rate category\n\n");
        out.push_str("| Table | Category | Reference | Rate | p-value | Adjusted p-value | Decision |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for t in &job.tests {
            let (p, d) = match &t.result {
                AuditResult::Completed(o) => (opt(o.p_value), t.adjusted_decision.unwrap_or(o.decision)),
                AuditResult::Refused(r) => {
                    let _ = writeln!(out, "| {} | {} | {} | {} | refused: {} | | |", t.axis, t.category, t.reference, t.rate, r.reason);
                    continue;
                }
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                t.axis,
                t.category,
                t.reference,
                t.rate,
                p,
                opt(t.adjusted_p_value),
                decision(d)
            );
        }
        out.push('\n');
    }
    if !job.intervals.is_empty() {
        out.push_str("### Bootstrap intervals\n\n");
        out.push_str("| Table | Category | Rate | Estimate | Lower | Upper | Level |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for i in &job.intervals {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.2} |",
                i.axis, i.category, i.rate, i.estimate, i.lower, i.upper, i.level
            );
        }
        out.push('\n');
    }
}

/// Human-readable summary carrying the same content as the JSON form.
pub fn render_markdown(s: &BiasAuditSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Bias audit summary\n");
    let _ = writeln!(out, "- Audit date: {}", s.audit_date);
    let _ = writeln!(out, "- Audited object: {}", s.audited_object);
    if let Some(h) = &s.config_hash {
        let _ = writeln!(out, "- Configuration hash (sha256): {h}");
    }
    let st = &s.settings;
    let _ = writeln!(out, "- Threshold: {}", st.threshold);
    let _ = writeln!(out, "- Presumption: {:?} ({})", st.presumption, st.null_hypothesis);
    let _ = writeln!(out, "- Significance: {}", st.significance);
    let _ = writeln!(out, "- Method: {:?}", st.method);
    let _ = writeln!(out, "- Multiplicity correction: {:?}", st.multiplicity);
    let _ = writeln!(out, "- Minimum cell count: {}", st.min_cell_count);
    let _ = writeln!(out, "- Bootstrap resamples: {}, seed {}\n", st.bootstrap_resamples, st.seed);
    out.push_str("Definitions:\n\n");
    for d in &st.definitions {
        let _ = writeln!(out, "- {d}");
    }
    out.push('\n');

    out.push_str("## Data provenance\n\n");
    out.push_str("| Job category | Ingested | Quarantined | Excluded | Used |\n|---|---|---|---|---|\n");
    for (job, c) in &s.data_provenance.per_job_category {
        let _ = writeln!(out, "| {job} | {} | {} | {} | {} |", c.ingested, c.quarantined, c.excluded, c.used);
    }
    let t = &s.data_provenance.totals;
    let _ = writeln!(out, "| total | {} | {} | {} | {} |\n", t.ingested, t.quarantined, t.excluded, t.used);
    if !s.data_provenance.quarantined_rows.is_empty() {
        out.push_str("Quarantined rows:\n\n");
        for q in &s.data_provenance.quarantined_rows {
            let _ = writeln!(
                out,
                "- line {} ({}): {}",
                q.line,
                q.applicant_id.as_deref().unwrap_or("no id"),
                q.reason
            );
        }
        out.push('\n');
    }
    out.push_str("## Exclusions\n\n");
    let _ = writeln!(out, "{}\n", s.exclusions_narrative);
    for e in &s.exclusion_ledger {
        let _ = writeln!(out, "- {} ({}): {}", e.applicant_id, e.job_category, e.reason);
    }
    if !s.exclusion_ledger.is_empty() {
        out.push('\n');
    }
    if let Some(td) = &s.test_data {
        out.push_str("## Test data\n\n");
        let _ = writeln!(out, "- Method: {}", td.method);
        let _ = writeln!(out, "- Model: {}", td.model_identity);
        let _ = writeln!(out, "- Size: {}, seed {}", td.n, td.seed);
        for (cell, n) in &td.per_cell {
            let _ = writeln!(out, "- Stratum {cell}: {n}");
        }
        let _ = writeln!(out, "- Used because: {}\n", td.trigger.join("; "));
    }
    for job in &s.job_categories {
        job_section(&mut out, job);
    }
    out.push_str("## Notes\n\n");
    for n in &s.notes {
        let _ = writeln!(out, "- {n}");
    }
    out
}

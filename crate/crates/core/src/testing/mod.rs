//! Hypothesis-testing engine: evidence in, compliance decision out.
//!
//! Every audit states its presumption (the null hypothesis). Under
//! presumption of compliance the null is `g(f) <= 0` and the auditor carries
//! the burden of proof; under presumption of non-compliance the null is
//! `g(f) > 0` and the burden shifts to the model provider. Failing to reject
//! never confirms the null, and reports never claim it does.
//!
//! Method compatibility:
//!
//! | criterion            | methods                                                  | minimum evidence              |
//! |----------------------|----------------------------------------------------------|-------------------------------|
//! | statistical parity   | `boundary_z`, `tost_equivalence` (non-compliance only)   | 30 per group                  |
//! |                      | `exact_binomial_boundary`                                | 1 per group, `n1 n2 <= 10^6`  |
//! |                      | `bootstrap_ci`                                           | 5 per group                   |
//! | max loss             | any; decided by direct comparison                        | one record in `S`             |
//! | individual fairness  | any; decided by the one-sided witness rule               | two records                   |
//! | impact metrics       | none directly; tested per category by the LL144 workflow |                               |

mod boundary;
mod bootstrap;
mod multiplicity;
mod power;

use serde::{Deserialize, Serialize};

pub use boundary::{
    boundary_z_p_value, boundary_z_test, exact_binomial_boundary_test, exact_p_value, exact_rejection_probability,
    TestResult, EXACT_MAX_CELLS, NUISANCE_GRID, Z_MIN_GROUP,
};
pub use bootstrap::{bootstrap_ci, bootstrap_replicates, quantile_sorted, selection_rate, BootstrapInterval, MIN_RESAMPLES};
pub use multiplicity::{adjust_multiplicity, Adjusted, Multiplicity};
pub use power::{
    analytic_power, estimate_operating_characteristics, required_sample_size, required_sample_size_equivalence,
    PowerEstimate, MIN_TRIALS,
};

use crate::blackbox::SyntheticError;
use crate::criteria::{
    lipschitz_lower_bound, max_loss_from_evidence, ComplianceCriterion, CriterionError, CriterionEstimate,
    IndividualFairness, MaxLoss, ParityCounts, StatisticalParity,
};
use crate::evidence::{DistributionSpec, Evidence, EvidenceError, Truncation};

pub const AUDIT_SCHEMA_VERSION: u32 = 1;
/// Smallest group size for the bootstrap method.
pub const BOOTSTRAP_MIN_GROUP: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presumption {
    /// Null `g(f) <= 0`.
    Compliance,
    /// Null `g(f) > 0`.
    NonCompliance,
}

impl Presumption {
    pub fn null_hypothesis(&self) -> &'static str {
        match self {
            Presumption::Compliance => "H0: g(f) <= 0 (compliant)",
            Presumption::NonCompliance => "J0: g(f) > 0 (non-compliant)",
        }
    }

    fn presumed(&self) -> &'static str {
        match self {
            Presumption::Compliance => "presumed compliant",
            Presumption::NonCompliance => "presumed non-compliant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    BoundaryZ,
    ExactBinomialBoundary,
    TostEquivalence,
    BootstrapCi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    RejectNull,
    FailToReject,
}

impl Decision {
    /// Ties at the significance level reject.
    pub fn from_p(p: f64, zeta: f64) -> Self {
        if p <= zeta {
            Decision::RejectNull
        } else {
            Decision::FailToReject
        }
    }
}

/// What the auditor assumes about inputs and the model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelAssumptions {
    /// The input distribution `D` the criterion is evaluated under.
    pub distribution: DistributionSpec,
    /// Free-text description of the model family.
    pub family: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

fn default_resamples() -> usize {
    2000
}
fn default_target_power() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    pub criterion: ComplianceCriterion,
    pub presumption: Presumption,
    /// `zeta`, the tolerated false positive rate.
    pub significance: f64,
    pub method: TestMethod,
    pub assumptions: ModelAssumptions,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Gap assumed when recommending a sample size. Defaults to twice the
    /// threshold under presumption of compliance and zero otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planning_gap: Option<f64>,
    #[serde(default = "default_target_power")]
    pub target_power: f64,
}

impl AuditSpec {
    pub fn validate(&self) -> Result<(), TestError> {
        let z = self.significance;
        if !(z > 0.0 && z <= 0.5) {
            return Err(TestError::Invalid(format!("significance must lie in (0, 0.5], got {z}")));
        }
        if !(self.target_power > 0.0 && self.target_power < 1.0) {
            return Err(TestError::Invalid(format!("target_power must lie in (0, 1), got {}", self.target_power)));
        }
        self.criterion.validate(None)?;
        self.assumptions.distribution.validate()?;
        let incompatible = || TestError::Incompatible { method: self.method, criterion: self.criterion.kind() };
        match (&self.criterion, self.method) {
            (ComplianceCriterion::ImpactMetrics(_), _) => return Err(incompatible()),
            (ComplianceCriterion::StatisticalParity(_), TestMethod::TostEquivalence)
                if self.presumption == Presumption::Compliance =>
            {
                return Err(incompatible())
            }
            _ => {}
        }
        if self.method == TestMethod::BootstrapCi && self.bootstrap_resamples < MIN_RESAMPLES {
            return Err(TestError::Invalid(format!(
                "bootstrap_resamples must be at least {MIN_RESAMPLES}, got {}",
                self.bootstrap_resamples
            )));
        }
        Ok(())
    }
}

/// Where the tested data came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub model_identity: String,
    pub strategy: String,
    pub replayable: bool,
    pub anomalies: usize,
    #[serde(default)]
    pub exclusions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<Truncation>,
}

impl Source {
    pub fn from_evidence(e: &Evidence) -> Self {
        Self {
            model_identity: e.provenance.model.identity.clone(),
            strategy: e.provenance.strategy.tag().to_string(),
            replayable: e.replayable(),
            anomalies: e.provenance.anomalies.len(),
            exclusions: e.provenance.exclusions.clone(),
            truncation: e.provenance.truncation.clone(),
        }
    }
}

/// Mandatory disclosure attached to every outcome and refusal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disclosure {
    pub presumption: Presumption,
    pub null_hypothesis: String,
    pub significance: f64,
    pub method: TestMethod,
    /// The procedure actually applied.
    pub procedure: String,
    pub assumptions: ModelAssumptions,
    pub n: usize,
    pub truncated: bool,
    /// The decision can only ever go one way on finite evidence.
    pub one_sided: bool,
    pub source: Source,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    /// Quantity the interval covers.
    pub target: String,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub schema_version: u32,
    pub decision: Decision,
    /// Absent when the procedure defines none (direct comparison, witness rule).
    pub p_value: Option<f64>,
    pub estimate: CriterionEstimate,
    pub confidence_interval: Option<ConfidenceInterval>,
    pub statement: String,
    pub disclosure: Disclosure,
}

/// An audit that could not be carried out on the evidence at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refusal {
    pub schema_version: u32,
    pub reason: String,
    /// Suggested per-group sample size (or query count for max loss).
    pub recommended_n: Option<u64>,
    pub disclosure: Disclosure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AuditResult {
    Completed(Box<AuditOutcome>),
    Refused(Refusal),
}

impl AuditResult {
    pub fn outcome(&self) -> Option<&AuditOutcome> {
        match self {
            AuditResult::Completed(o) => Some(o),
            AuditResult::Refused(_) => None,
        }
    }

    pub fn disclosure(&self) -> &Disclosure {
        match self {
            AuditResult::Completed(o) => &o.disclosure,
            AuditResult::Refused(r) => &r.disclosure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TestError {
    #[error("invalid audit: {0}")]
    Invalid(String),
    #[error("method {method:?} is not available for the {criterion} criterion")]
    Incompatible { method: TestMethod, criterion: &'static str },
    #[error("groups of {n1} and {n2} are below the normal-approximation guard of 30; use exact_binomial_boundary")]
    UseExactTest { n1: u64, n2: u64 },
    #[error("n1 * n2 = {n1} * {n2} exceeds the exact enumeration bound of 10^6; use boundary_z")]
    UseZTest { n1: u64, n2: u64 },
    #[error("statistic undefined: {0}")]
    StatisticUndefined(String),
    #[error("no finite sample size exists: {reason}")]
    NoFiniteSampleSize { reason: String },
    #[error("{trials} trials requested; at least {minimum} are needed for a meaningful standard error")]
    TooFewTrials { trials: usize, minimum: usize },
    #[error("a simulated audit was refused: {reason}")]
    TrialRefused { reason: String },
    #[error(transparent)]
    Criterion(#[from] CriterionError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
}

fn statement(presumption: Presumption, decision: Decision, zeta: f64) -> String {
    let does = match decision {
        Decision::RejectNull => "does",
        Decision::FailToReject => "does not",
    };
    format!("{}; evidence {does} suffice to reject at significance {zeta}", presumption.presumed())
}

struct Applied {
    decision: Decision,
    p_value: Option<f64>,
    interval: Option<ConfidenceInterval>,
    procedure: String,
    one_sided: bool,
    notes: Vec<String>,
}

fn disclosure(spec: &AuditSpec, source: Source, n: usize, procedure: String, one_sided: bool, notes: Vec<String>) -> Disclosure {
    let mut notes = notes;
    if let Some(t) = &source.truncation {
        notes.push(format!("evidence truncated: {} of {} requested records ({})", t.obtained, t.requested, t.reason));
    }
    if source.anomalies > 0 {
        notes.push(format!("{} responses fell outside the declared output space and were logged as anomalies", source.anomalies));
    }
    if !source.replayable {
        notes.push("evidence is not replayable: the model's randomness is outside the auditor's control".into());
    }
    Disclosure {
        presumption: spec.presumption,
        null_hypothesis: spec.presumption.null_hypothesis().to_string(),
        significance: spec.significance,
        method: spec.method,
        procedure,
        assumptions: spec.assumptions.clone(),
        n,
        truncated: source.truncation.is_some(),
        one_sided,
        source,
        notes,
    }
}

fn complete(spec: &AuditSpec, source: Source, estimate: CriterionEstimate, a: Applied) -> AuditResult {
    let mut statement = statement(spec.presumption, a.decision, spec.significance);
    if a.one_sided {
        statement.push_str("; finite evidence can exhibit a violation but never certify compliance");
    }
    let disclosure = disclosure(spec, source, estimate.n, a.procedure, a.one_sided, a.notes);
    AuditResult::Completed(Box::new(AuditOutcome {
        schema_version: AUDIT_SCHEMA_VERSION,
        decision: a.decision,
        p_value: a.p_value,
        estimate,
        confidence_interval: a.interval,
        statement,
        disclosure,
    }))
}

fn refuse(spec: &AuditSpec, source: Source, n: usize, reason: String, recommended_n: Option<u64>) -> AuditResult {
    let procedure = "none (audit withheld)".to_string();
    AuditResult::Refused(Refusal {
        schema_version: AUDIT_SCHEMA_VERSION,
        reason,
        recommended_n,
        disclosure: disclosure(spec, source, n, procedure, false, Vec::new()),
    })
}

/// Per-group sample size to recommend when a parity audit is withheld.
fn recommend(spec: &AuditSpec, eta: f64, floor: u64) -> Option<u64> {
    let n = match spec.presumption {
        Presumption::Compliance => {
            let gap = spec.planning_gap.unwrap_or(2.0 * eta);
            required_sample_size(eta, gap, spec.significance, spec.target_power.max(spec.significance))
        }
        Presumption::NonCompliance => {
            let gap = spec.planning_gap.unwrap_or(0.0);
            required_sample_size_equivalence(eta, gap, spec.significance, spec.target_power.max(spec.significance))
        }
    };
    n.ok().map(|n| n.max(floor))
}

/// Map evidence to a decision under `spec`.
///
/// Returns [`AuditResult::Refused`] with a sample-size recommendation when the
/// evidence is too thin for the chosen method, and an error when the spec
/// itself is unusable.
pub fn run_audit(evidence: &Evidence, spec: &AuditSpec) -> Result<AuditResult, TestError> {
    spec.validate()?;
    let source = Source::from_evidence(evidence);
    match &spec.criterion {
        ComplianceCriterion::StatisticalParity(c) => {
            match ParityCounts::from_evidence(evidence, &c.group_a, &c.group_b) {
                Ok(counts) => run_parity_audit(counts, c, spec, source),
                Err(CriterionError::MissingGroup { group }) => {
                    let floor = method_floor(spec.method);
                    Ok(refuse(spec, source, evidence.n(), format!("no records for group {group:?}"), recommend(spec, c.threshold, floor)))
                }
                Err(e) => Err(e.into()),
            }
        }
        ComplianceCriterion::MaxLoss(c) => max_loss_audit(evidence, c, spec, source),
        ComplianceCriterion::IndividualFairness(c) => fairness_audit(evidence, c, spec, source),
        ComplianceCriterion::ImpactMetrics(_) => {
            Err(TestError::Incompatible { method: spec.method, criterion: spec.criterion.kind() })
        }
    }
}

fn method_floor(method: TestMethod) -> u64 {
    match method {
        TestMethod::BoundaryZ | TestMethod::TostEquivalence => Z_MIN_GROUP,
        TestMethod::ExactBinomialBoundary => 1,
        TestMethod::BootstrapCi => BOOTSTRAP_MIN_GROUP,
    }
}

/// Statistical-parity audit on selection counts.
pub fn run_parity_audit(
    counts: ParityCounts,
    criterion: &StatisticalParity,
    spec: &AuditSpec,
    source: Source,
) -> Result<AuditResult, TestError> {
    let eta = criterion.threshold;
    let zeta = spec.significance;
    let estimate = counts.estimate(criterion);
    let floor = method_floor(spec.method);
    if counts.n1 < floor || counts.n2 < floor {
        let reason = format!(
            "groups of {} and {} records are below the {:?} minimum of {floor} per group",
            counts.n1, counts.n2, spec.method
        );
        return Ok(refuse(spec, source, estimate.n, reason, recommend(spec, eta, floor)));
    }
    let pres = spec.presumption;
    let applied = match spec.method {
        TestMethod::BoundaryZ | TestMethod::TostEquivalence => {
            let r = boundary_z_test(counts, eta, zeta, pres)?;
            let procedure = match pres {
                Presumption::Compliance => "normal-approximation test at the least favourable boundary |p1 - p2| = eta",
                Presumption::NonCompliance => "normal-approximation two one-sided tests (TOST) for |p1 - p2| < eta",
            };
            Applied {
                decision: r.decision,
                p_value: Some(r.p_value),
                interval: None,
                procedure: procedure.into(),
                one_sided: false,
                notes: vec!["standard error uses continuity-adjusted rates (k + 0.5) / (n + 1)".into()],
            }
        }
        TestMethod::ExactBinomialBoundary => {
            let r = exact_binomial_boundary_test(counts, eta, zeta, pres)?;
            let shape = match pres {
                Presumption::Compliance => "at the least favourable boundary |p1 - p2| = eta",
                Presumption::NonCompliance => "as two one-sided tests (TOST) for |p1 - p2| < eta",
            };
            Applied {
                decision: r.decision,
                p_value: Some(r.p_value),
                interval: None,
                procedure: format!(
                    "exact unconditional binomial test {shape}; nuisance rate maximised over a {NUISANCE_GRID}-point grid per boundary line"
                ),
                one_sided: false,
                notes: Vec::new(),
            }
        }
        TestMethod::BootstrapCi => parity_bootstrap(counts, eta, spec)?,
    };
    Ok(complete(spec, source, estimate, applied))
}

fn parity_bootstrap(c: ParityCounts, eta: f64, spec: &AuditSpec) -> Result<Applied, TestError> {
    let zeta = spec.significance;
    let mut rows = Vec::with_capacity((c.n1 + c.n2) as usize);
    for (k, n, first) in [(c.k1, c.n1, true), (c.k2, c.n2, false)] {
        rows.extend((0..n).map(|i| (first, i < k)));
    }
    let diff = |rs: &[(bool, bool)]| {
        let (mut a, mut na, mut b, mut nb) = (0u64, 0u64, 0u64, 0u64);
        for &(first, sel) in rs {
            if first {
                na += 1;
                a += u64::from(sel);
            } else {
                nb += 1;
                b += u64::from(sel);
            }
        }
        (na > 0 && nb > 0).then(|| a as f64 / na as f64 - b as f64 / nb as f64)
    };
    let b = spec.bootstrap_resamples;
    let (mut reps, redraws) = bootstrap_replicates(&rows, diff, b, spec.seed)?;
    reps.sort_by(f64::total_cmp);
    let frac = |pred: &dyn Fn(f64) -> bool| reps.iter().filter(|&&d| pred(d)).count() as f64 / b as f64;
    let p = match spec.presumption {
        // evidence against |d| <= eta must sit wholly above eta or wholly below -eta
        Presumption::Compliance => frac(&|d| d <= eta).min(frac(&|d| d >= -eta)),
        Presumption::NonCompliance => frac(&|d| d >= eta).max(frac(&|d| d <= -eta)),
    };
    let level = 1.0 - 2.0 * zeta;
    Ok(Applied {
        decision: Decision::from_p(p, zeta),
        p_value: Some(p),
        interval: Some(ConfidenceInterval {
            target: "p1 - p2".into(),
            lower: quantile_sorted(&reps, zeta),
            upper: quantile_sorted(&reps, 1.0 - zeta),
            level,
        }),
        procedure: format!(
            "percentile bootstrap of p1 - p2 ({b} resamples); p-value is the bootstrap mass on the null side of the boundary"
        ),
        one_sided: false,
        notes: if redraws > 0 { vec![format!("{redraws} resamples lacking a group were redrawn")] } else { Vec::new() },
    })
}

fn max_loss_audit(evidence: &Evidence, c: &MaxLoss, spec: &AuditSpec, source: Source) -> Result<AuditResult, TestError> {
    let estimate = match max_loss_from_evidence(evidence, c) {
        Ok(e) => e,
        Err(CriterionError::TooFewRecords { .. }) => {
            let reason = "no record in the evidence lies in the query set S".to_string();
            return Ok(refuse(spec, source, evidence.n(), reason, Some(c.set.len() as u64)));
        }
        Err(e) => return Err(e.into()),
    };
    let exhaustive = !estimate.lower_bound;
    let violated = estimate.g_hat > 0.0;
    let decision = match (spec.presumption, exhaustive) {
        (Presumption::Compliance, _) if violated => Decision::RejectNull,
        (Presumption::NonCompliance, true) if !violated => Decision::RejectNull,
        _ => Decision::FailToReject,
    };
    let mut notes = vec![format!("the requested method {:?} is not used: g(f) is computed, not estimated", spec.method)];
    if evidence.provenance.model.stochastic {
        notes.push("the model is stochastic; each input of S was observed once".into());
    }
    let procedure = if exhaustive {
        "direct comparison of the maximum loss over the fully enumerated set S with the threshold"
    } else {
        "lower bound from the queried part of S; a loss above the threshold is a violation witness"
    };
    let applied = Applied { decision, p_value: None, interval: None, procedure: procedure.into(), one_sided: !exhaustive, notes };
    Ok(complete(spec, source, estimate, applied))
}

fn fairness_audit(
    evidence: &Evidence,
    c: &IndividualFairness,
    spec: &AuditSpec,
    source: Source,
) -> Result<AuditResult, TestError> {
    let estimate = match lipschitz_lower_bound(evidence, c) {
        Ok(e) => e,
        Err(e @ (CriterionError::TooFewRecords { .. } | CriterionError::AllPairsDegenerate { .. })) => {
            return Ok(refuse(spec, source, evidence.n(), e.to_string(), Some(2)));
        }
        Err(e) => return Err(e.into()),
    };
    let violated = estimate.g_hat > 0.0 || estimate.zero_distance_violation.is_some();
    let decision = match spec.presumption {
        Presumption::Compliance if violated => Decision::RejectNull,
        _ => Decision::FailToReject,
    };
    let mut notes = vec![
        format!("the requested method {:?} is not used: no p-value is defined for the witness rule", spec.method),
        "the estimate is a lower bound on g(f); the supremum over all input pairs is not computable from finite queries"
            .into(),
    ];
    if estimate.zero_distance_violation.is_some() {
        notes.push("a pair at input distance 0 received different outputs, violating any Lipschitz bound".into());
    }
    let applied = Applied {
        decision,
        p_value: None,
        interval: None,
        procedure: "one-sided witness rule: reject compliance iff a logged pair's difference quotient exceeds L".into(),
        one_sided: true,
        notes,
    };
    Ok(complete(spec, source, estimate, applied))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::blackbox::{make_synthetic, SyntheticModelSpec};
    use crate::evidence::{collect, QueryBudget, SamplingStrategy};

    pub(crate) fn parity_spec(method: TestMethod, presumption: Presumption) -> AuditSpec {
        AuditSpec {
            criterion: ComplianceCriterion::StatisticalParity(StatisticalParity {
                group_a: "G1".into(),
                group_b: "G2".into(),
                threshold: 0.1,
            }),
            presumption,
            significance: 0.05,
            method,
            assumptions: ModelAssumptions {
                distribution: DistributionSpec {
                    features: BTreeMap::new(),
                    groups: Some(BTreeMap::from([("G1".into(), 0.5), ("G2".into(), 0.5)])),
                },
                family: "binary classifier, outputs independent across queries".into(),
                tags: vec!["binary".into()],
            },
            bootstrap_resamples: 1000,
            seed: 7,
            planning_gap: None,
            target_power: 0.8,
        }
    }

    fn evidence(a: f64, b: f64, per_group: usize, seed: u64) -> Evidence {
        let m = make_synthetic(&SyntheticModelSpec::group_threshold(a, b, 0.1)).unwrap().model;
        let s = SamplingStrategy::Stratified {
            base: DistributionSpec::default(),
            quotas: BTreeMap::from([("G1".into(), per_group), ("G2".into(), per_group)]),
        };
        collect(&m, &s, 2 * per_group, &mut QueryBudget::unlimited(), seed).unwrap()
    }

    fn counts_evidence(k1: u64, n1: u64, k2: u64, n2: u64) -> ParityCounts {
        ParityCounts::new(k1, n1, k2, n2)
    }

    fn source() -> Source {
        Source {
            model_identity: "table".into(),
            strategy: "historical".into(),
            replayable: true,
            anomalies: 0,
            exclusions: vec![],
            truncation: None,
        }
    }

    #[test]
    fn identical_rates_fail_to_reject_under_both_presumptions() {
        for method in [TestMethod::BoundaryZ, TestMethod::ExactBinomialBoundary, TestMethod::BootstrapCi] {
            for pres in [Presumption::Compliance, Presumption::NonCompliance] {
                let spec = parity_spec(method, pres);
                let out = run_parity_audit(counts_evidence(15, 40, 15, 40), spec.criterion_parity(), &spec, source()).unwrap();
                let o = out.outcome().unwrap();
                assert_eq!(o.decision, Decision::FailToReject, "{method:?} {pres:?}");
                assert!(!o.statement.contains("confirmed"));
                assert!(o.statement.contains("evidence does not suffice to reject"));
            }
        }
    }

    #[test]
    fn empty_evidence_is_withheld_with_a_recommendation() {
        let ev = evidence(0.5, 0.5, 0, 1);
        let out = run_audit(&ev, &parity_spec(TestMethod::BoundaryZ, Presumption::Compliance)).unwrap();
        match out {
            AuditResult::Refused(r) => {
                assert!(r.recommended_n.unwrap() >= 30);
                assert!(r.reason.contains("G1"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn clear_gap_rejects_compliance() {
        let ev = evidence(0.8, 0.5, 1000, 3);
        let o = run_audit(&ev, &parity_spec(TestMethod::BoundaryZ, Presumption::Compliance)).unwrap();
        let o = o.outcome().unwrap();
        assert_eq!(o.decision, Decision::RejectNull);
        assert!(o.statement.starts_with("presumed compliant; evidence does suffice"));
        assert!(o.p_value.unwrap() <= 0.05);
    }

    #[test]
    fn decision_agrees_with_p_value() {
        for seed in 0..10 {
            let ev = evidence(0.55, 0.4, 60, seed);
            for method in [TestMethod::BoundaryZ, TestMethod::ExactBinomialBoundary, TestMethod::BootstrapCi] {
                let o = run_audit(&ev, &parity_spec(method, Presumption::Compliance)).unwrap();
                let o = o.outcome().unwrap();
                assert_eq!(o.decision, Decision::from_p(o.p_value.unwrap(), 0.05));
            }
        }
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut s = parity_spec(TestMethod::BoundaryZ, Presumption::Compliance);
        s.significance = 0.6;
        assert!(s.validate().is_err());
        let s = parity_spec(TestMethod::TostEquivalence, Presumption::Compliance);
        assert!(matches!(s.validate(), Err(TestError::Incompatible { .. })));
        assert!(parity_spec(TestMethod::TostEquivalence, Presumption::NonCompliance).validate().is_ok());
    }

    #[test]
    fn small_groups_under_z_are_withheld() {
        let spec = parity_spec(TestMethod::BoundaryZ, Presumption::Compliance);
        let out = run_parity_audit(counts_evidence(5, 20, 5, 20), spec.criterion_parity(), &spec, source()).unwrap();
        assert!(matches!(out, AuditResult::Refused(_)));
    }

    #[test]
    fn bootstrap_audit_is_seed_deterministic() {
        let spec = parity_spec(TestMethod::BootstrapCi, Presumption::Compliance);
        let c = counts_evidence(30, 50, 12, 50);
        let a = run_parity_audit(c, spec.criterion_parity(), &spec, source()).unwrap();
        let b = run_parity_audit(c, spec.criterion_parity(), &spec, source()).unwrap();
        assert_eq!(a, b);
        let ci = a.outcome().unwrap().confidence_interval.clone().unwrap();
        assert!(ci.lower < 0.36 && 0.36 < ci.upper);
    }

    impl AuditSpec {
        fn criterion_parity(&self) -> &StatisticalParity {
            match &self.criterion {
                ComplianceCriterion::StatisticalParity(c) => c,
                _ => unreachable!(),
            }
        }
    }
}

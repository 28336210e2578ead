//! Compliance criteria `g: F -> R` and their finite-sample estimators.
//!
//! A model is `g`-compliant iff `g(f) <= 0`. Every estimator here returns a
//! [`CriterionEstimate`] whose `g_hat` is on that same scale.

mod impact;
mod lipschitz;
mod maxloss;
mod parity;

use serde::{Deserialize, Serialize};

pub use impact::{impact_metrics, median, rows_from_evidence, AxisTable, CategoryMetrics, ImpactRow, MetricTable, RateStat};
pub use lipschitz::{lipschitz_lower_bound, scan_pairs, InputMetric, Norm, OutputMetric, PairScan, PairWitness};
pub use maxloss::{eval_max_loss, max_loss_from_evidence, LossFunction};
pub use parity::{estimate_statistical_parity, ParityCounts};

use crate::blackbox::{ModelInput, QueryError};
use crate::evidence::EvidenceError;

/// `g(f) = max_{x in set} loss(f(x), x) - threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxLoss {
    pub loss: LossFunction,
    pub set: Vec<ModelInput>,
    pub threshold: f64,
}

/// `g(f) = |P(f=1 | G_a) - P(f=1 | G_b)| - threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatisticalParity {
    pub group_a: String,
    pub group_b: String,
    pub threshold: f64,
}

/// `g(f) = sup D(f(x), f(x')) / d(x, x') - lipschitz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndividualFairness {
    #[serde(default)]
    pub output_metric: OutputMetric,
    #[serde(default)]
    pub input_metric: InputMetric,
    pub lipschitz: f64,
}

fn default_true() -> bool {
    true
}

/// The selection-rate / scoring-rate / median-score / impact-ratio family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactMetrics {
    pub axes: Vec<String>,
    /// Declared levels per axis. Axes without an entry use the observed levels.
    #[serde(default)]
    pub levels: std::collections::BTreeMap<String, Vec<String>>,
    /// Also tabulate the cross-product of all axes.
    #[serde(default = "default_true")]
    pub intersections: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ComplianceCriterion {
    MaxLoss(MaxLoss),
    StatisticalParity(StatisticalParity),
    IndividualFairness(IndividualFairness),
    ImpactMetrics(ImpactMetrics),
}

impl ComplianceCriterion {
    pub fn kind(&self) -> &'static str {
        match self {
            ComplianceCriterion::MaxLoss(_) => "max_loss",
            ComplianceCriterion::StatisticalParity(_) => "statistical_parity",
            ComplianceCriterion::IndividualFairness(_) => "individual_fairness",
            ComplianceCriterion::ImpactMetrics(_) => "impact_metrics",
        }
    }

    /// Check parameter invariants. `groups` is the declared group set, if known.
    pub fn validate(&self, groups: Option<&[String]>) -> Result<(), CriterionError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(CriterionError::Invalid(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            ComplianceCriterion::MaxLoss(c) => {
                positive("threshold", c.threshold)?;
                if c.set.is_empty() {
                    return Err(CriterionError::Invalid("query set S is empty".into()));
                }
                Ok(())
            }
            ComplianceCriterion::StatisticalParity(c) => {
                positive("threshold", c.threshold)?;
                if c.group_a == c.group_b {
                    return Err(CriterionError::Invalid("the two groups must differ".into()));
                }
                if let Some(groups) = groups {
                    for g in [&c.group_a, &c.group_b] {
                        if !groups.contains(g) {
                            return Err(CriterionError::Invalid(format!("group {g:?} not in the declared group set")));
                        }
                    }
                }
                Ok(())
            }
            ComplianceCriterion::IndividualFairness(c) => {
                positive("lipschitz", c.lipschitz)?;
                positive("categorical_mismatch", c.input_metric.categorical_mismatch)
            }
            ComplianceCriterion::ImpactMetrics(c) => {
                if c.axes.is_empty() {
                    return Err(CriterionError::Invalid("at least one category axis is required".into()));
                }
                Ok(())
            }
        }
    }
}

/// Selection counts and rate for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    pub group: String,
    pub selected: usize,
    pub total: usize,
    pub rate: f64,
}

/// Empirical estimate of `g(f)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionEstimate {
    pub criterion: String,
    pub g_hat: f64,
    /// Records the estimate was computed from.
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupRate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standard_error: Option<f64>,
    /// Set when `g_hat` only bounds `g(f)` from below.
    pub lower_bound: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<PairWitness>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub degenerate_pairs: usize,
    /// A pair with `d(x, x') = 0` but `D(f(x), f(x')) > 0`: violates any
    /// Lipschitz bound outright.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_distance_violation: Option<PairWitness>,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl CriterionEstimate {
    pub(crate) fn new(criterion: &str, g_hat: f64, n: usize) -> Self {
        Self {
            criterion: criterion.to_string(),
            g_hat,
            n,
            groups: Vec::new(),
            standard_error: None,
            lower_bound: false,
            witness: None,
            degenerate_pairs: 0,
            zero_distance_violation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CriterionError {
    #[error("invalid criterion: {0}")]
    Invalid(String),
    #[error("no records for group {group:?} in the evidence")]
    MissingGroup { group: String },
    #[error("record {index} has a non-binary output")]
    NonBinaryOutput { index: usize },
    #[error("need at least {needed} records, found {found}")]
    TooFewRecords { needed: usize, found: usize },
    #[error("all {pairs} logged pairs have zero input distance")]
    AllPairsDegenerate { pairs: usize },
    #[error("budget admits {remaining} queries but |S| = {needed}; exhaustive evaluation refused")]
    BudgetTooSmall { needed: usize, remaining: usize },
    #[error("loss undefined for record {index}: {reason}")]
    Loss { index: usize, reason: String },
    #[error("no rows to tabulate")]
    NoRows,
    #[error("row {row} lacks category axis {axis:?}")]
    MissingAxis { row: usize, axis: String },
    #[error("row {row} carries neither a selection nor a score")]
    MissingOutcome { row: usize },
    #[error("row {row}: level {level:?} is not declared for axis {axis:?}")]
    UndeclaredLevel { row: usize, axis: String, level: String },
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
}

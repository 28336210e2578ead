//! Power curves, sample-size planning and Monte Carlo operating characteristics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::boundary::{std_normal, Z_MIN_GROUP};
use super::{run_audit, AuditResult, AuditSpec, Decision, Presumption, TestError};
use crate::blackbox::{make_synthetic, SyntheticKind, SyntheticModelSpec};
use crate::evidence::{collect, DistributionSpec, QueryBudget, SamplingStrategy};
use crate::seed::{derive, stream};

pub const MIN_TRIALS: usize = 100;

fn z_crit(zeta: f64) -> f64 {
    std_normal().inverse_cdf(1.0 - zeta)
}

/// Normal-approximation rejection probability of the boundary test under
/// presumption of compliance when the true rates are `(p1, p2)`: the test
/// rejects roughly when `|d| >= eta + z_{1 - zeta} se`.
pub fn analytic_power(p1: f64, p2: f64, n1: u64, n2: u64, eta: f64, zeta: f64) -> f64 {
    let se = (p1 * (1.0 - p1) / n1 as f64 + p2 * (1.0 - p2) / n2 as f64).sqrt();
    let phi = std_normal();
    let z = z_crit(zeta);
    let delta = p1 - p2;
    if se == 0.0 {
        return if delta.abs() > eta { 1.0 } else { 0.0 };
    }
    phi.cdf((delta - eta) / se - z) + phi.cdf((-delta - eta) / se - z)
}

/// Planning power at `n` per group with the worst-case variance 1/4 per group.
fn planning_power(phi: &Normal, n: u64, eta: f64, gap: f64, z: f64) -> f64 {
    let se = (0.5 / n as f64).sqrt();
    phi.cdf((gap - eta) / se - z) + phi.cdf(-(gap + eta) / se - z)
}

fn equivalence_power(phi: &Normal, n: u64, eta: f64, gap: f64, z: f64) -> f64 {
    let se = (0.5 / n as f64).sqrt();
    (phi.cdf((eta - gap) / se - z) + phi.cdf((eta + gap) / se - z) - 1.0).max(0.0)
}

/// Smallest `n >= lo` with `power(n) >= target`, by doubling then bisection.
fn smallest_n(lo: u64, target: f64, power: impl Fn(u64) -> f64) -> Result<u64, TestError> {
    if power(lo) >= target {
        return Ok(lo);
    }
    let mut hi = lo.max(1) * 2;
    let mut below = lo;
    while power(hi) < target {
        below = hi;
        hi = hi.checked_mul(2).filter(|&h| h <= 1 << 40).ok_or_else(|| {
            TestError::Invalid("required sample size exceeds 2^40 per group".into())
        })?;
    }
    while hi - below > 1 {
        let mid = below + (hi - below) / 2;
        if power(mid) >= target {
            hi = mid;
        } else {
            below = mid;
        }
    }
    Ok(hi)
}

fn check_target(zeta: f64, target: f64) -> Result<(), TestError> {
    super::boundary::check_args(0.0, zeta)?;
    if !(target >= zeta && target < 1.0) {
        return Err(TestError::Invalid(format!("target power {target} must lie in [{zeta}, 1)")));
    }
    Ok(())
}

/// Per-group sample size at which the boundary test (presumption of
/// compliance) reaches `target` power when the true gap is `gap`.
///
/// Uses the normal approximation with worst-case variance 1/4 per group, so
/// the answer is conservative for rates away from 1/2. Never returns less
/// than the z-test guard of 30 per group.
pub fn required_sample_size(eta: f64, gap: f64, zeta: f64, target: f64) -> Result<u64, TestError> {
    check_target(zeta, target)?;
    if !(gap > eta) {
        return Err(TestError::NoFiniteSampleSize {
            reason: format!(
                "a true gap of {gap} does not exceed the threshold {eta}: the model is compliant, so the \
                 rejection probability never rises above the significance level however many queries are made"
            ),
        });
    }
    let phi = std_normal();
    let z = z_crit(zeta);
    smallest_n(Z_MIN_GROUP, target, |n| planning_power(&phi, n, eta, gap, z))
}

/// Per-group sample size at which the TOST equivalence test (presumption of
/// non-compliance) reaches `target` power when the true gap is `gap`.
pub fn required_sample_size_equivalence(eta: f64, gap: f64, zeta: f64, target: f64) -> Result<u64, TestError> {
    check_target(zeta, target)?;
    if !(gap.abs() < eta) {
        return Err(TestError::NoFiniteSampleSize {
            reason: format!(
                "a true gap of {gap} is not inside (-{eta}, {eta}): the model is non-compliant, so \
                 equivalence can never be shown"
            ),
        });
    }
    let phi = std_normal();
    let z = z_crit(zeta);
    smallest_n(Z_MIN_GROUP, target, |n| equivalence_power(&phi, n, eta, gap, z))
}

/// Monte Carlo false/true positive rates of a full audit pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub trials: usize,
    pub rejections: usize,
    pub ground_truth_g: f64,
    /// Whether the audit's null hypothesis holds for this model.
    pub null_true: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fpr_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fpr_se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tpr_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tpr_se: Option<f64>,
}

impl PowerEstimate {
    pub fn rejection_rate(&self) -> f64 {
        self.rejections as f64 / self.trials as f64
    }

    pub fn standard_error(&self) -> f64 {
        let p = self.rejection_rate();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// Run `trials` independent audits against fresh evidence from a zoo model.
///
/// `GroupThreshold` models are sampled stratified, `n_per_group` per group;
/// other kinds draw `n_per_group` inputs i.i.d. from the spec's declared
/// input distribution. Trial `t` uses its own seed stream, so the estimate
/// is independent of the worker count.
pub fn estimate_operating_characteristics(
    spec: &AuditSpec,
    synthetic: &SyntheticModelSpec,
    n_per_group: usize,
    trials: usize,
    seed: u64,
) -> Result<PowerEstimate, TestError> {
    if trials < MIN_TRIALS {
        return Err(TestError::TooFewTrials { trials, minimum: MIN_TRIALS });
    }
    spec.validate()?;
    let zoo = make_synthetic(synthetic)?;
    let (strategy, n) = match &synthetic.kind {
        SyntheticKind::GroupThreshold { group_a, group_b, .. } => (
            SamplingStrategy::Stratified {
                base: DistributionSpec::default(),
                quotas: BTreeMap::from([(group_a.clone(), n_per_group), (group_b.clone(), n_per_group)]),
            },
            2 * n_per_group,
        ),
        _ => (SamplingStrategy::Iid { distribution: spec.assumptions.distribution.clone() }, n_per_group),
    };
    let base = derive(seed, stream::TRIALS);
    let outcomes: Vec<Result<bool, TestError>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = derive(base, t as u64);
            let evidence = collect(&zoo.model, &strategy, n, &mut QueryBudget::unlimited(), trial_seed)?;
            let trial_spec = AuditSpec { seed: trial_seed, ..spec.clone() };
            match run_audit(&evidence, &trial_spec)? {
                AuditResult::Completed(o) => Ok(o.decision == Decision::RejectNull),
                AuditResult::Refused(r) => Err(TestError::TrialRefused { reason: r.reason }),
            }
        })
        .collect();
    let mut rejections = 0;
    for o in outcomes {
        rejections += usize::from(o?);
    }
    let null_true = match spec.presumption {
        Presumption::Compliance => zoo.truth.compliant(),
        Presumption::NonCompliance => !zoo.truth.compliant(),
    };
    let rate = rejections as f64 / trials as f64;
    let se = (rate * (1.0 - rate) / trials as f64).sqrt();
    Ok(PowerEstimate {
        trials,
        rejections,
        ground_truth_g: zoo.truth.g,
        null_true,
        fpr_hat: null_true.then_some(rate),
        fpr_se: null_true.then_some(se),
        tpr_hat: (!null_true).then_some(rate),
        tpr_se: (!null_true).then_some(se),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_equal_to_zeta_gives_the_minimum() {
        assert_eq!(required_sample_size(0.1, 0.15, 0.05, 0.05).unwrap(), Z_MIN_GROUP);
    }

    #[test]
    fn no_finite_n_inside_the_null() {
        assert!(matches!(required_sample_size(0.1, 0.1, 0.05, 0.8), Err(TestError::NoFiniteSampleSize { .. })));
        assert!(matches!(
            required_sample_size_equivalence(0.1, 0.2, 0.05, 0.8),
            Err(TestError::NoFiniteSampleSize { .. })
        ));
    }

    #[test]
    fn halving_the_margin_quadruples_n() {
        let a = required_sample_size(0.1, 0.14, 0.05, 0.9).unwrap() as f64;
        let b = required_sample_size(0.1, 0.18, 0.05, 0.9).unwrap() as f64;
        let ratio = a / b;
        assert!((ratio - 4.0).abs() < 0.2, "{a} / {b} = {ratio}");
    }

    #[test]
    fn returned_n_is_the_smallest() {
        let phi = std_normal();
        let z = z_crit(0.05);
        let n = required_sample_size(0.1, 0.2, 0.05, 0.8).unwrap();
        assert!(planning_power(&phi, n, 0.1, 0.2, z) >= 0.8);
        assert!(planning_power(&phi, n - 1, 0.1, 0.2, z) < 0.8);
    }

    #[test]
    fn analytic_power_at_the_boundary_is_about_zeta() {
        let p = analytic_power(0.55, 0.45, 10_000, 10_000, 0.1, 0.05);
        assert!((p - 0.05).abs() < 1e-3, "{p}");
    }
}

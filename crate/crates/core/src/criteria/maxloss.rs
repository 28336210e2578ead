use serde::{Deserialize, Serialize};

use super::{CriterionError, CriterionEstimate, MaxLoss};
use crate::blackbox::{BlackBoxModel, ModelInput, Value};
use crate::evidence::{collect, Evidence, QueryBudget, SamplingStrategy};

/// Loss `l(y, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossFunction {
    /// `l = 0`.
    Zero,
    /// `l = y` (the model already reports a loss).
    OutputValue,
    /// `l = |y - x[feature]|`.
    AbsoluteError { feature: String },
}

impl LossFunction {
    pub fn eval(&self, y: &Value, x: &ModelInput) -> Result<f64, String> {
        let num = |v: &Value| v.as_num().ok_or_else(|| format!("output {v} is not numeric"));
        match self {
            LossFunction::Zero => Ok(0.0),
            LossFunction::OutputValue => num(y),
            LossFunction::AbsoluteError { feature } => {
                let target = x.num(feature).ok_or_else(|| format!("input lacks numeric feature {feature:?}"))?;
                Ok((num(y)? - target).abs())
            }
        }
    }
}

/// Query every input of `S` once and return `max l(f(x), x) - threshold`.
///
/// Refuses outright when the budget cannot cover `S`: a partial sweep would
/// silently turn an exact value into a lower bound.
pub fn eval_max_loss(
    model: &dyn BlackBoxModel,
    criterion: &MaxLoss,
    budget: &mut QueryBudget,
    seed: u64,
) -> Result<CriterionEstimate, CriterionError> {
    if criterion.set.is_empty() {
        return Err(CriterionError::Invalid("query set S is empty".into()));
    }
    let needed = criterion.set.len();
    if budget.remaining() < needed {
        return Err(CriterionError::BudgetTooSmall { needed, remaining: budget.remaining() });
    }
    let strategy = SamplingStrategy::Enumerate { inputs: criterion.set.clone() };
    let evidence = collect(model, &strategy, needed, budget, seed)?;
    max_loss_from_evidence(&evidence, criterion)
}

/// Max loss over the records whose inputs lie in `S`. The estimate is a lower
/// bound unless every element of `S` appears in the evidence.
pub fn max_loss_from_evidence(evidence: &Evidence, criterion: &MaxLoss) -> Result<CriterionEstimate, CriterionError> {
    let mut covered = vec![false; criterion.set.len()];
    let mut worst = f64::NEG_INFINITY;
    let mut used = 0;
    for r in &evidence.records {
        let Some(pos) = criterion.set.iter().position(|x| *x == r.input) else { continue };
        covered[pos] = true;
        used += 1;
        let l = criterion.loss.eval(&r.output.value, &r.input).map_err(|reason| CriterionError::Loss { index: r.index, reason })?;
        worst = worst.max(l);
    }
    if used == 0 {
        return Err(CriterionError::TooFewRecords { needed: 1, found: 0 });
    }
    let mut est = CriterionEstimate::new("max_loss", worst - criterion.threshold, used);
    est.lower_bound = covered.iter().any(|c| !c);
    Ok(est)
}

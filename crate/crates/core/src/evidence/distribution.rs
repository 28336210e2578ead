//! Product distributions over declared features.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvidenceError;
use crate::blackbox::{FeatureKind, InputSchema, ModelInput, Value};

/// Marginal law of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Marginal {
    Categorical { probs: BTreeMap<String, f64> },
    Uniform { min: f64, max: f64 },
    PointMass { value: Value },
}

/// Input distribution `D`: independent marginals per feature plus an optional
/// law for the group attribute.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    #[serde(default)]
    pub features: BTreeMap<String, Marginal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<BTreeMap<String, f64>>,
}

fn check_probs(name: &str, probs: &BTreeMap<String, f64>) -> Result<(), EvidenceError> {
    if probs.is_empty() {
        return Err(EvidenceError::distribution(name, "no categories"));
    }
    if probs.values().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(EvidenceError::distribution(name, "probabilities must be nonnegative"));
    }
    let total: f64 = probs.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(EvidenceError::distribution(name, format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

fn sample_categorical<R: Rng>(probs: &BTreeMap<String, f64>, rng: &mut R) -> String {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (level, p) in probs {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(level);
        if u < acc {
            return level.clone();
        }
    }
    last.expect("validated nonempty").clone()
}

impl DistributionSpec {
    pub fn point_mass(features: BTreeMap<String, Value>) -> Self {
        Self {
            features: features.into_iter().map(|(k, value)| (k, Marginal::PointMass { value })).collect(),
            groups: None,
        }
    }

    /// Schema-free sanity checks: probabilities form distributions and
    /// intervals are ordered.
    pub fn validate(&self) -> Result<(), EvidenceError> {
        for (name, m) in &self.features {
            match m {
                Marginal::Categorical { probs } => check_probs(name, probs)?,
                Marginal::Uniform { min, max } if !(min.is_finite() && max.is_finite() && min <= max) => {
                    return Err(EvidenceError::distribution(name, format!("empty interval [{min}, {max}]")));
                }
                _ => {}
            }
        }
        if let Some(g) = &self.groups {
            check_probs("group", g)?;
        }
        Ok(())
    }

    /// Check that this distribution generates schema-conformant inputs.
    /// `need_groups` is false when the group is assigned by the caller (stratified draws).
    pub fn covers(&self, schema: &InputSchema, need_groups: bool) -> Result<(), EvidenceError> {
        for name in self.features.keys() {
            if !schema.features.contains_key(name) {
                return Err(EvidenceError::distribution(name, "feature not in the model schema"));
            }
        }
        for (name, kind) in &schema.features {
            let marginal = self
                .features
                .get(name)
                .ok_or_else(|| EvidenceError::distribution(name, "no marginal declared"))?;
            match (kind, marginal) {
                (FeatureKind::Numeric { min, max, .. }, Marginal::Uniform { min: a, max: b }) => {
                    if !(a <= b && a >= min && b <= max) {
                        return Err(EvidenceError::distribution(
                            name,
                            format!("uniform [{a}, {b}] not inside the domain [{min}, {max}]"),
                        ));
                    }
                }
                (FeatureKind::Numeric { min, max, .. }, Marginal::PointMass { value: Value::Num(x) }) => {
                    if x < min || x > max {
                        return Err(EvidenceError::distribution(name, format!("point {x} outside the domain")));
                    }
                }
                (FeatureKind::Categorical { levels }, Marginal::Categorical { probs }) => {
                    check_probs(name, probs)?;
                    if let Some(bad) = probs.keys().find(|l| !levels.contains(l)) {
                        return Err(EvidenceError::distribution(name, format!("level {bad:?} not declared")));
                    }
                }
                (FeatureKind::Categorical { levels }, Marginal::PointMass { value: Value::Cat(s) }) => {
                    if !levels.contains(s) {
                        return Err(EvidenceError::distribution(name, format!("level {s:?} not declared")));
                    }
                }
                _ => return Err(EvidenceError::distribution(name, "marginal kind does not match the feature kind")),
            }
        }
        if need_groups && !schema.groups.is_empty() {
            let probs = self
                .groups
                .as_ref()
                .ok_or_else(|| EvidenceError::distribution("group", "model declares groups but no group law given"))?;
            check_probs("group", probs)?;
            if let Some(bad) = probs.keys().find(|g| !schema.groups.contains(g)) {
                return Err(EvidenceError::distribution("group", format!("{bad:?} not in the declared group set")));
            }
        }
        Ok(())
    }

    /// One draw, projected onto the schema's feature domains.
    pub fn sample<R: Rng>(&self, schema: &InputSchema, rng: &mut R) -> ModelInput {
        let mut input = ModelInput::new();
        for (name, kind) in &schema.features {
            let value = match &self.features[name] {
                Marginal::Categorical { probs } => Value::Cat(sample_categorical(probs, rng)),
                Marginal::Uniform { min, max } => {
                    let u: f64 = rng.gen();
                    Value::Num(kind.project(min + u * (max - min)))
                }
                Marginal::PointMass { value: Value::Num(x) } => Value::Num(kind.project(*x)),
                Marginal::PointMass { value } => value.clone(),
            };
            input.features.insert(name.clone(), value);
        }
        if !schema.groups.is_empty() {
            if let Some(probs) = &self.groups {
                input.group = Some(sample_categorical(probs, rng));
            }
        }
        input
    }
}

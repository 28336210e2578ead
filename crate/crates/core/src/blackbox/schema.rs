//! Input schemas and output spaces.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Reserved wire key carrying the group attribute `x_G`.
pub const GROUP_KEY: &str = "group";

/// A single feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Cat(String),
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Value::Cat(s) => Some(s),
            Value::Num(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(x) => write!(f, "{x}"),
            Value::Cat(s) => write!(f, "{s:?}"),
        }
    }
}

/// One point `x` of the input space.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelInput {
    pub features: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl ModelInput {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_feature(mut self, name: impl Into<String>, value: Value) -> Self {
        self.features.insert(name.into(), value);
        self
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }

    pub fn num(&self, name: &str) -> Option<f64> {
        self.features.get(name).and_then(Value::as_num)
    }
}

/// Declared kind and domain of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureKind {
    /// Real-valued on `[min, max]`. With `step`, values live on the lattice
    /// `min + i * step`.
    Numeric {
        min: f64,
        max: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<f64>,
    },
    Categorical { levels: Vec<String> },
}

impl FeatureKind {
    /// Clamp to the domain and round to the lattice when one is declared.
    pub fn project(&self, x: f64) -> f64 {
        match *self {
            FeatureKind::Numeric { min, max, step } => {
                let x = x.clamp(min, max);
                match step {
                    Some(h) if h > 0.0 => {
                        let last = ((max - min) / h + 1e-9).floor();
                        let i = ((x - min) / h).round().clamp(0.0, last);
                        min + i * h
                    }
                    _ => x,
                }
            }
            FeatureKind::Categorical { .. } => x,
        }
    }

    /// All lattice points of a stepped numeric feature.
    pub fn lattice(&self) -> Option<Vec<f64>> {
        match *self {
            FeatureKind::Numeric { min, max, step: Some(h) } if h > 0.0 => {
                let last = ((max - min) / h + 1e-9).floor() as usize;
                Some((0..=last).map(|i| min + i as f64 * h).collect())
            }
            _ => None,
        }
    }

    fn validate(&self, name: &str) -> Result<(), SchemaError> {
        match *self {
            FeatureKind::Numeric { min, max, step } => {
                if !(min.is_finite() && max.is_finite() && min <= max) {
                    return Err(SchemaError::new(name, "numeric domain requires finite min <= max"));
                }
                if let Some(h) = step {
                    if !(h.is_finite() && h > 0.0) {
                        return Err(SchemaError::new(name, "lattice step must be positive"));
                    }
                }
                Ok(())
            }
            FeatureKind::Categorical { ref levels } => {
                if levels.is_empty() {
                    return Err(SchemaError::new(name, "categorical feature needs at least one level"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("field `{field}`: {reason}")]
pub struct SchemaError {
    pub field: String,
    pub reason: String,
}

impl SchemaError {
    pub fn new(field: &str, reason: impl Into<String>) -> Self {
        Self { field: field.to_string(), reason: reason.into() }
    }
}

/// The declared input space of a model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSchema {
    #[serde(default)]
    pub features: BTreeMap<String, FeatureKind>,
    /// Declared group set `{G_1, G_2, ...}`. Empty means inputs carry no group.
    #[serde(default)]
    pub groups: Vec<String>,
}

impl InputSchema {
    pub fn validate(&self) -> Result<(), SchemaError> {
        for (name, kind) in &self.features {
            if name == GROUP_KEY {
                return Err(SchemaError::new(name, "feature name is reserved for the group attribute"));
            }
            kind.validate(name)?;
        }
        Ok(())
    }

    /// Check that `input` conforms: same feature names, matching kinds, values
    /// in domain, group present iff groups are declared.
    pub fn check(&self, input: &ModelInput) -> Result<(), SchemaError> {
        for name in input.features.keys() {
            if !self.features.contains_key(name) {
                return Err(SchemaError::new(name, "not declared in the model's input schema"));
            }
        }
        for (name, kind) in &self.features {
            let value = input
                .features
                .get(name)
                .ok_or_else(|| SchemaError::new(name, "missing"))?;
            match (kind, value) {
                (FeatureKind::Numeric { min, max, .. }, Value::Num(x)) => {
                    if !x.is_finite() || *x < *min || *x > *max {
                        return Err(SchemaError::new(
                            name,
                            format!("value {x} outside [{min}, {max}]"),
                        ));
                    }
                }
                (FeatureKind::Categorical { levels }, Value::Cat(s)) => {
                    if !levels.iter().any(|l| l == s) {
                        return Err(SchemaError::new(name, format!("level {s:?} not declared")));
                    }
                }
                (FeatureKind::Numeric { .. }, Value::Cat(_)) => {
                    return Err(SchemaError::new(name, "expected a number, got a category"));
                }
                (FeatureKind::Categorical { .. }, Value::Num(_)) => {
                    return Err(SchemaError::new(name, "expected a category, got a number"));
                }
            }
        }
        match (&input.group, self.groups.is_empty()) {
            (None, true) => Ok(()),
            (Some(_), true) => Err(SchemaError::new(GROUP_KEY, "model declares no group set")),
            (None, false) => Err(SchemaError::new(GROUP_KEY, "missing")),
            (Some(g), false) => {
                if self.groups.iter().any(|d| d == g) {
                    Ok(())
                } else {
                    Err(SchemaError::new(GROUP_KEY, format!("{g:?} not in the declared group set")))
                }
            }
        }
    }
}

/// Declared countable output space `Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutputSpace {
    /// `{0, 1}`.
    Binary,
    Labels { labels: Vec<String> },
    /// `{min + i (max - min) / steps : i = 0..=steps}`.
    Grid { min: f64, max: f64, steps: u32 },
}

impl OutputSpace {
    pub fn contains(&self, v: &Value) -> bool {
        match (self, v) {
            (OutputSpace::Binary, Value::Num(x)) => *x == 0.0 || *x == 1.0,
            (OutputSpace::Labels { labels }, Value::Cat(s)) => labels.iter().any(|l| l == s),
            (OutputSpace::Grid { min, max, steps }, Value::Num(x)) => {
                if !x.is_finite() || *x < *min - 1e-12 || *x > *max + 1e-12 {
                    return false;
                }
                if *steps == 0 {
                    return (*x - *min).abs() <= 1e-12;
                }
                let h = (max - min) / *steps as f64;
                let t = (x - min) / h;
                (t - t.round()).abs() <= 1e-6
            }
            _ => false,
        }
    }

    /// Nearest grid point (grids only; other spaces return `x` unchanged).
    pub fn snap(&self, x: f64) -> f64 {
        match *self {
            OutputSpace::Grid { min, max, steps } => {
                if steps == 0 {
                    return min;
                }
                let h = (max - min) / steps as f64;
                let i = ((x.clamp(min, max) - min) / h).round();
                min + i * h
            }
            _ => x,
        }
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        match self {
            OutputSpace::Binary => Ok(()),
            OutputSpace::Labels { labels } if labels.is_empty() => {
                Err(SchemaError::new("output", "label set is empty"))
            }
            OutputSpace::Labels { .. } => Ok(()),
            OutputSpace::Grid { min, max, .. } => {
                if min.is_finite() && max.is_finite() && min <= max {
                    Ok(())
                } else {
                    Err(SchemaError::new("output", "grid requires finite min <= max"))
                }
            }
        }
    }
}

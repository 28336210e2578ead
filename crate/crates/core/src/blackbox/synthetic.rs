//! Synthetic model zoo with analytically known ground truth.
//!
//! [`make_synthetic`] hands back the queryable model and its [`GroundTruth`] as
//! two separate values. The model type has no accessor for the truth, so audit
//! code that only receives a `&dyn BlackBoxModel` cannot read it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    BlackBoxModel, FeatureKind, InputSchema, ModelDescriptor, ModelInput, OutputSpace, QueryError, QuerySeed,
    RawOutput,
};

const TRUTH_TOLERANCE: f64 = 1e-9;

fn default_group_a() -> String {
    "G1".into()
}
fn default_group_b() -> String {
    "G2".into()
}
fn default_feature() -> String {
    "x".into()
}

/// Closed-form score maps with known Lipschitz constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreMap {
    Linear { slope: f64, intercept: f64 },
    /// Linear interpolation through `(x, y)` knots; constant outside them.
    Piecewise { knots: Vec<[f64; 2]> },
    Constant { value: f64 },
}

impl ScoreMap {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScoreMap::Linear { slope, intercept } => slope * x + intercept,
            ScoreMap::Constant { value } => *value,
            ScoreMap::Piecewise { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if x <= first[0] {
                    return first[1];
                }
                if x >= last[0] {
                    return last[1];
                }
                let k = knots.partition_point(|p| p[0] <= x);
                let ([x0, y0], [x1, y1]) = (knots[k - 1], knots[k]);
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// Smallest `L` with `|f(x) - f(x')| <= L |x - x'|`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            ScoreMap::Linear { slope, .. } => slope.abs(),
            ScoreMap::Constant { .. } => 0.0,
            ScoreMap::Piecewise { knots } => knots
                .windows(2)
                .map(|w| ((w[1][1] - w[0][1]) / (w[1][0] - w[0][0])).abs())
                .fold(0.0, f64::max),
        }
    }

    fn validate(&self) -> Result<(), SyntheticError> {
        if let ScoreMap::Piecewise { knots } = self {
            if knots.len() < 2 {
                return Err(SyntheticError::Invalid("piecewise map needs at least two knots".into()));
            }
            if knots.windows(2).any(|w| !(w[0][0] < w[1][0])) {
                return Err(SyntheticError::Invalid("knot abscissae must be strictly increasing".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticKind {
    /// Binary classifier selecting members of `group_a` with probability
    /// `rate_a` and of `group_b` with probability `rate_b`.
    GroupThreshold {
        #[serde(default = "default_group_a")]
        group_a: String,
        #[serde(default = "default_group_b")]
        group_b: String,
        rate_a: f64,
        rate_b: f64,
    },
    /// Deterministic score `map(x)` on one numeric feature, snapped to an
    /// output grid.
    ScoreFunction {
        #[serde(default = "default_feature")]
        feature: String,
        min: f64,
        max: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<f64>,
        map: ScoreMap,
        output_min: f64,
        output_max: f64,
        output_steps: u32,
    },
    /// Deterministic loss: `planted_loss` at `planted_at`, `background_loss`
    /// everywhere else on the lattice.
    LossPlant {
        #[serde(default = "default_feature")]
        feature: String,
        min: f64,
        max: f64,
        step: f64,
        planted_at: f64,
        planted_loss: f64,
        background_loss: f64,
        output_steps: u32,
    },
}

/// Parameters of a zoo model plus the threshold of its designated criterion:
/// statistical parity `η` for `GroupThreshold`, Lipschitz constant `L` for
/// `ScoreFunction`, maximum-loss `η` for `LossPlant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticModelSpec {
    pub kind: SyntheticKind,
    pub threshold: f64,
    /// When given, must agree with the value implied by the parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_g: Option<f64>,
}

impl SyntheticModelSpec {
    pub fn new(kind: SyntheticKind, threshold: f64) -> Self {
        Self { kind, threshold, ground_truth_g: None }
    }

    pub fn group_threshold(rate_a: f64, rate_b: f64, eta: f64) -> Self {
        Self::new(
            SyntheticKind::GroupThreshold {
                group_a: default_group_a(),
                group_b: default_group_b(),
                rate_a,
                rate_b,
            },
            eta,
        )
    }

    /// `g(f)` implied by the parameters.
    pub fn implied_g(&self) -> f64 {
        match &self.kind {
            SyntheticKind::GroupThreshold { rate_a, rate_b, .. } => (rate_a - rate_b).abs() - self.threshold,
            SyntheticKind::ScoreFunction { map, .. } => map.lipschitz() - self.threshold,
            SyntheticKind::LossPlant { planted_loss, .. } => planted_loss - self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyntheticError {
    #[error("invalid synthetic model: {0}")]
    Invalid(String),
    #[error("declared ground_truth_g = {declared} is inconsistent with the parameters (implied {implied})")]
    InconsistentGroundTruth { declared: f64, implied: f64 },
}

/// The true `g(f)` of a zoo model. Only test harnesses and calibration code
/// receive this value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub g: f64,
}

impl GroundTruth {
    /// `H_0: g(f) <= 0` holds.
    pub fn compliant(&self) -> bool {
        self.g <= 0.0
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticModel {
    desc: ModelDescriptor,
    kind: SyntheticKind,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub model: SyntheticModel,
    pub truth: GroundTruth,
}

fn on_lattice(x: f64, min: f64, step: f64) -> bool {
    let t = (x - min) / step;
    (t - t.round()).abs() <= 1e-9
}

/// Build a zoo model, rejecting parameters that contradict a declared ground truth.
pub fn make_synthetic(spec: &SyntheticModelSpec) -> Result<Synthetic, SyntheticError> {
    if !(spec.threshold.is_finite() && spec.threshold > 0.0) {
        return Err(SyntheticError::Invalid("threshold must be positive".into()));
    }
    let implied = spec.implied_g();
    if let Some(declared) = spec.ground_truth_g {
        if (declared - implied).abs() > TRUTH_TOLERANCE {
            return Err(SyntheticError::InconsistentGroundTruth { declared, implied });
        }
    }
    let desc = match &spec.kind {
        SyntheticKind::GroupThreshold { group_a, group_b, rate_a, rate_b } => {
            if group_a == group_b {
                return Err(SyntheticError::Invalid("groups must differ".into()));
            }
            for r in [rate_a, rate_b] {
                if !(0.0..=1.0).contains(r) {
                    return Err(SyntheticError::Invalid(format!("selection rate {r} outside [0, 1]")));
                }
            }
            ModelDescriptor {
                identity: format!("synthetic:group_threshold({group_a}={rate_a},{group_b}={rate_b})"),
                schema: InputSchema { features: BTreeMap::new(), groups: vec![group_a.clone(), group_b.clone()] },
                output: OutputSpace::Binary,
                stochastic: true,
                cost_per_query: 1.0,
                replayable: true,
            }
        }
        SyntheticKind::ScoreFunction { feature, min, max, step, map, output_min, output_max, output_steps } => {
            map.validate()?;
            let kind = FeatureKind::Numeric { min: *min, max: *max, step: *step };
            let schema = InputSchema { features: BTreeMap::from([(feature.clone(), kind)]), groups: Vec::new() };
            schema.validate().map_err(|e| SyntheticError::Invalid(e.to_string()))?;
            let output = OutputSpace::Grid { min: *output_min, max: *output_max, steps: *output_steps };
            output.validate().map_err(|e| SyntheticError::Invalid(e.to_string()))?;
            ModelDescriptor {
                identity: format!("synthetic:score_function({feature}, L*={})", map.lipschitz()),
                schema,
                output,
                stochastic: false,
                cost_per_query: 1.0,
                replayable: true,
            }
        }
        SyntheticKind::LossPlant {
            feature,
            min,
            max,
            step,
            planted_at,
            planted_loss,
            background_loss,
            output_steps,
        } => {
            let kind = FeatureKind::Numeric { min: *min, max: *max, step: Some(*step) };
            let schema = InputSchema { features: BTreeMap::from([(feature.clone(), kind)]), groups: Vec::new() };
            schema.validate().map_err(|e| SyntheticError::Invalid(e.to_string()))?;
            if !(min..=max).contains(&planted_at) || !on_lattice(*planted_at, *min, *step) {
                return Err(SyntheticError::Invalid("planted input must be a lattice point of the domain".into()));
            }
            let output = OutputSpace::Grid { min: 0.0, max: 1.0, steps: *output_steps };
            for loss in [planted_loss, background_loss] {
                if !output.contains(&super::Value::Num(*loss)) {
                    return Err(SyntheticError::Invalid(format!("loss {loss} is not on the output grid")));
                }
            }
            if background_loss > planted_loss {
                return Err(SyntheticError::Invalid("background loss exceeds the planted maximum".into()));
            }
            ModelDescriptor {
                identity: format!("synthetic:loss_plant({feature}={planted_at})"),
                schema,
                output,
                stochastic: false,
                cost_per_query: 1.0,
                replayable: true,
            }
        }
    };
    Ok(Synthetic {
        model: SyntheticModel { desc, kind: spec.kind.clone() },
        truth: GroundTruth { g: implied },
    })
}

impl SyntheticModel {
    fn respond_one(&self, input: &ModelInput, seed: QuerySeed) -> RawOutput {
        match &self.kind {
            SyntheticKind::GroupThreshold { group_a, rate_a, rate_b, .. } => {
                let rate = if input.group.as_deref() == Some(group_a.as_str()) { *rate_a } else { *rate_b };
                let u: f64 = ChaCha8Rng::seed_from_u64(seed.0).gen();
                serde_json::json!(if u < rate { 1 } else { 0 })
            }
            SyntheticKind::ScoreFunction { feature, map, .. } => {
                let x = input.num(feature).unwrap_or(f64::NAN);
                serde_json::json!(self.desc.output.snap(map.eval(x)))
            }
            SyntheticKind::LossPlant { feature, step, planted_at, planted_loss, background_loss, .. } => {
                let x = input.num(feature).unwrap_or(f64::NAN);
                let loss = if (x - planted_at).abs() < step / 2.0 { planted_loss } else { background_loss };
                serde_json::json!(self.desc.output.snap(*loss))
            }
        }
    }
}

impl BlackBoxModel for SyntheticModel {
    fn descriptor(&self) -> &ModelDescriptor {
        &self.desc
    }

    fn respond_batch(&self, inputs: &[ModelInput], seeds: &[QuerySeed]) -> Result<Vec<RawOutput>, QueryError> {
        Ok(inputs.iter().zip(seeds).map(|(x, s)| self.respond_one(x, *s)).collect())
    }
}

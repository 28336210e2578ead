//! Opaque model access.
//!
//! Auditors only ever see a [`BlackBoxModel`]: they choose inputs and observe
//! outputs. Local synthetic models and remote HTTP endpoints implement the same
//! trait, so an audit is written once and runs against either.

mod remote;
mod schema;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use remote::{remote_model, RemoteEndpoint, RemoteModel};
pub use schema::{FeatureKind, InputSchema, ModelInput, OutputSpace, SchemaError, Value, GROUP_KEY};
pub use synthetic::{
    make_synthetic, GroundTruth, ScoreMap, Synthetic, SyntheticError, SyntheticKind, SyntheticModel,
    SyntheticModelSpec,
};

/// Per-query seed. Stochastic models draw their output from this seed alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuerySeed(pub u64);

/// A conformant model response `y ∈ Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelOutput {
    pub value: Value,
}

impl ModelOutput {
    pub fn num(&self) -> Option<f64> {
        self.value.as_num()
    }
}

/// Everything an auditor may know about a model without looking inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    /// Identity of the audited object (recorded in every disclosure).
    pub identity: String,
    pub schema: InputSchema,
    pub output: OutputSpace,
    pub stochastic: bool,
    #[serde(default = "default_cost")]
    pub cost_per_query: f64,
    /// Whether `(input, seed)` fully determines the response.
    pub replayable: bool,
}

fn default_cost() -> f64 {
    1.0
}

/// Raw response as returned by the model, before the conformance check.
pub type RawOutput = serde_json::Value;

/// An opaque, queryable decision function.
pub trait BlackBoxModel: Send + Sync {
    fn descriptor(&self) -> &ModelDescriptor;

    /// Answer a batch of schema-checked inputs. The i-th output must answer
    /// the i-th input.
    fn respond_batch(&self, inputs: &[ModelInput], seeds: &[QuerySeed]) -> Result<Vec<RawOutput>, QueryError>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("endpoint answered with HTTP status {code}")]
    Status { code: u16 },
    #[error("timed out after {ms} ms")]
    Timeout { ms: u64 },
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error("query rejected, input {index}: {source}")]
    Schema {
        index: usize,
        #[source]
        source: SchemaError,
    },
    #[error("transport error: {0}")]
    Transport(#[from] TransportError),
    #[error("non-conformant output {raw} for input {index}: not in the declared output space")]
    NonConformant { index: usize, raw: String },
    #[error("model failure: {0}")]
    Model(String),
}

impl QueryError {
    /// Transport hiccups may succeed on retry; schema and conformance errors never will.
    pub fn is_retryable(&self) -> bool {
        match self {
            QueryError::Transport(TransportError::Status { code }) => *code == 429 || *code >= 500,
            QueryError::Transport(TransportError::Timeout { .. } | TransportError::Io(_)) => true,
            _ => false,
        }
    }
}

/// A response outside the declared `Y`. Kept as audit-relevant evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub query_index: usize,
    pub input: ModelInput,
    pub raw: String,
}

fn conform(space: &OutputSpace, raw: &RawOutput) -> Option<Value> {
    let value = match raw {
        serde_json::Value::Number(n) => Value::Num(n.as_f64()?),
        serde_json::Value::String(s) => Value::Cat(s.clone()),
        _ => return None,
    };
    space.contains(&value).then_some(value)
}

/// Query `model` once. Non-conformant responses become [`QueryError::NonConformant`].
pub fn query(model: &dyn BlackBoxModel, input: &ModelInput, seed: QuerySeed) -> Result<ModelOutput, QueryError> {
    let mut out = query_batch(model, std::slice::from_ref(input), &[seed])?;
    match out.pop() {
        Some(Ok(output)) => Ok(output),
        Some(Err(anomaly)) => Err(QueryError::NonConformant { index: 0, raw: anomaly.raw }),
        None => Err(TransportError::Protocol("empty response".into()).into()),
    }
}

/// Query a batch. Schema violations and transport failures fail the whole
/// batch; a non-conformant response fails only its own slot.
pub fn query_batch(
    model: &dyn BlackBoxModel,
    inputs: &[ModelInput],
    seeds: &[QuerySeed],
) -> Result<Vec<Result<ModelOutput, Anomaly>>, QueryError> {
    assert_eq!(inputs.len(), seeds.len(), "one seed per input");
    let desc = model.descriptor();
    for (index, input) in inputs.iter().enumerate() {
        desc.schema.check(input).map_err(|source| QueryError::Schema { index, source })?;
    }
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let raw = model.respond_batch(inputs, seeds)?;
    if raw.len() != inputs.len() {
        return Err(TransportError::Protocol(format!(
            "{} outputs for {} inputs",
            raw.len(),
            inputs.len()
        ))
        .into());
    }
    Ok(raw
        .iter()
        .zip(inputs)
        .enumerate()
        .map(|(i, (r, input))| match conform(&desc.output, r) {
            Some(value) => Ok(ModelOutput { value }),
            None => Err(Anomaly { query_index: i, input: input.clone(), raw: r.to_string() }),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo {
        desc: ModelDescriptor,
        reply: RawOutput,
    }

    impl BlackBoxModel for Echo {
        fn descriptor(&self) -> &ModelDescriptor {
            &self.desc
        }
        fn respond_batch(&self, inputs: &[ModelInput], _: &[QuerySeed]) -> Result<Vec<RawOutput>, QueryError> {
            Ok(vec![self.reply.clone(); inputs.len()])
        }
    }

    fn echo(reply: RawOutput) -> Echo {
        Echo {
            desc: ModelDescriptor {
                identity: "echo".into(),
                schema: InputSchema::default(),
                output: OutputSpace::Binary,
                stochastic: false,
                cost_per_query: 1.0,
                replayable: true,
            },
            reply,
        }
    }

    #[test]
    fn conformant_reply_passes_through() {
        let m = echo(serde_json::json!(1));
        let out = query(&m, &ModelInput::new(), QuerySeed(0)).unwrap();
        assert_eq!(out.value, Value::Num(1.0));
    }

    #[test]
    fn out_of_space_reply_is_an_anomaly() {
        let m = echo(serde_json::json!(2));
        let err = query(&m, &ModelInput::new(), QuerySeed(0)).unwrap_err();
        assert!(matches!(err, QueryError::NonConformant { .. }));
        assert!(!err.is_retryable());
        let m = echo(serde_json::json!(null));
        let batch = query_batch(&m, &[ModelInput::new()], &[QuerySeed(0)]).unwrap();
        assert_eq!(batch[0].as_ref().unwrap_err().raw, "null");
    }

    #[test]
    fn schema_errors_are_not_retryable() {
        let m = echo(serde_json::json!(1));
        let err = query(&m, &ModelInput::new().with_group("G1"), QuerySeed(0)).unwrap_err();
        assert!(matches!(err, QueryError::Schema { .. }));
        assert!(!err.is_retryable());
        assert!(QueryError::Transport(TransportError::Timeout { ms: 5 }).is_retryable());
        assert!(QueryError::Transport(TransportError::Status { code: 503 }).is_retryable());
        assert!(!QueryError::Transport(TransportError::Status { code: 400 }).is_retryable());
    }
}

//! HTTP client for deployed models.
//!
//! Wire protocol: `POST <url>` (the `/predict` route) with body
//! `{"inputs": [{feature: value, ..., "group": g}, ...]}`, answered by
//! `{"outputs": [value, ...]}` in input order. Per-query seeds are not sent;
//! remote randomness cannot be replayed and models built here report
//! `replayable = false`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    BlackBoxModel, InputSchema, ModelDescriptor, ModelInput, OutputSpace, QueryError, QuerySeed, RawOutput,
    TransportError, Value, GROUP_KEY,
};

fn default_timeout() -> u64 {
    10_000
}
fn default_batch() -> usize {
    64
}

/// Where and how to reach a deployed model, plus its declared interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteEndpoint {
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_batch")]
    pub max_batch_size: usize,
    /// Name of the environment variable holding a bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    /// Whether the provider declares outputs to be deterministic.
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default = "default_cost")]
    pub cost_per_query: f64,
    pub schema: InputSchema,
    pub output: OutputSpace,
}

fn default_cost() -> f64 {
    1.0
}

#[derive(Debug, Serialize)]
struct PredictRequest {
    inputs: Vec<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Debug, Deserialize)]
struct PredictResponse {
    outputs: Vec<RawOutput>,
}

pub struct RemoteModel {
    desc: ModelDescriptor,
    url: String,
    timeout_ms: u64,
    max_batch: usize,
    token: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteModel").field("url", &self.url).field("identity", &self.desc.identity).finish()
    }
}

/// Connect to an endpoint. No request is made until the first query.
pub fn remote_model(endpoint: &RemoteEndpoint) -> Result<RemoteModel, QueryError> {
    endpoint
        .schema
        .validate()
        .and_then(|_| endpoint.output.validate())
        .map_err(|source| QueryError::Schema { index: 0, source })?;
    if endpoint.max_batch_size == 0 {
        return Err(QueryError::Model("max_batch_size must be positive".into()));
    }
    let url = if endpoint.url.trim_end_matches('/').ends_with("/predict") {
        endpoint.url.clone()
    } else {
        format!("{}/predict", endpoint.url.trim_end_matches('/'))
    };
    let token = endpoint.token_env.as_ref().and_then(|var| std::env::var(var).ok());
    let agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(endpoint.timeout_ms)).build();
    Ok(RemoteModel {
        desc: ModelDescriptor {
            identity: endpoint.identity.clone().unwrap_or_else(|| format!("remote:{url}")),
            schema: endpoint.schema.clone(),
            output: endpoint.output.clone(),
            stochastic: !endpoint.deterministic,
            cost_per_query: endpoint.cost_per_query,
            replayable: false,
        },
        url,
        timeout_ms: endpoint.timeout_ms,
        max_batch: endpoint.max_batch_size,
        token,
        agent,
    })
}

fn encode(input: &ModelInput) -> serde_json::Map<String, serde_json::Value> {
    let mut obj = serde_json::Map::new();
    for (k, v) in &input.features {
        let v = match v {
            Value::Num(x) => serde_json::json!(x),
            Value::Cat(s) => serde_json::json!(s),
        };
        obj.insert(k.clone(), v);
    }
    if let Some(g) = &input.group {
        obj.insert(GROUP_KEY.to_string(), serde_json::json!(g));
    }
    obj
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            return matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock);
        }
        source = e.source();
    }
    err.to_string().contains("timed out")
}

impl RemoteModel {
    fn post(&self, chunk: &[ModelInput]) -> Result<Vec<RawOutput>, QueryError> {
        let body = PredictRequest { inputs: chunk.iter().map(encode).collect() };
        let mut req = self.agent.post(&self.url).set("Content-Type", "application/json");
        if let Some(tok) = &self.token {
            req = req.set("Authorization", &format!("Bearer {tok}"));
        }
        let resp = match req.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) => return Err(TransportError::Status { code }.into()),
            Err(ureq::Error::Transport(t)) => {
                return Err(if is_timeout(&t) {
                    TransportError::Timeout { ms: self.timeout_ms }
                } else {
                    TransportError::Io(t.to_string())
                }
                .into())
            }
        };
        let text = resp.into_string().map_err(|e| TransportError::Io(e.to_string()))?;
        let parsed: PredictResponse = serde_json::from_str(&text)
            .map_err(|e| TransportError::Protocol(format!("malformed response body: {e}")))?;
        if parsed.outputs.len() != chunk.len() {
            return Err(TransportError::Protocol(format!(
                "{} outputs for {} inputs",
                parsed.outputs.len(),
                chunk.len()
            ))
            .into());
        }
        Ok(parsed.outputs)
    }
}

impl BlackBoxModel for RemoteModel {
    fn descriptor(&self) -> &ModelDescriptor {
        &self.desc
    }

    fn respond_batch(&self, inputs: &[ModelInput], _seeds: &[QuerySeed]) -> Result<Vec<RawOutput>, QueryError> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(self.max_batch) {
            out.extend(self.post(chunk)?);
        }
        Ok(out)
    }
}

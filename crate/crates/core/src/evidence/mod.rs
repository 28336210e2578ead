//! The auditor's evidence: seeded input draws, query budgets and an
//! append-only log of input-output pairs with provenance.

mod adaptive;
mod distribution;
mod io;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adaptive::adaptive_next;
pub use distribution::{DistributionSpec, Marginal};
pub use io::{read_jsonl, write_jsonl, EVIDENCE_SCHEMA_VERSION};

use crate::blackbox::{
    query_batch, Anomaly, BlackBoxModel, InputSchema, ModelDescriptor, ModelInput, ModelOutput, QueryError, QuerySeed,
};
use crate::criteria::{InputMetric, OutputMetric};
use crate::seed::{derive, stream};

/// Queries per parallel work unit inside [`collect`].
const QUERY_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvidenceError {
    #[error("distribution does not cover `{feature}`: {reason}")]
    Distribution { feature: String, reason: String },
    #[error("quota infeasible: group {group:?} is not in the declared group set")]
    QuotaInfeasible { group: String },
    #[error("quotas sum to {quotas} but {requested} inputs were requested")]
    QuotaMismatch { quotas: usize, requested: usize },
    #[error("invalid sampling strategy: {0}")]
    Strategy(String),
    #[error("query budget must be positive")]
    EmptyBudget,
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("evidence file: {0}")]
    Format(String),
}

impl EvidenceError {
    pub(crate) fn distribution(feature: &str, reason: impl Into<String>) -> Self {
        EvidenceError::Distribution { feature: feature.to_string(), reason: reason.into() }
    }
}

fn default_restarts() -> usize {
    4
}
fn default_batch_pairs() -> usize {
    16
}

/// How inputs are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingStrategy {
    /// Independent draws from `D`.
    Iid { distribution: DistributionSpec },
    /// Exact per-group quotas; non-group features drawn from `base`.
    Stratified {
        #[serde(default)]
        base: DistributionSpec,
        quotas: BTreeMap<String, usize>,
    },
    /// Hill-climbing search for a large difference quotient: each round
    /// perturbs the best pair seen so far (within `radius`) and adds
    /// `restarts` fresh random pairs drawn from `domain`.
    AdaptivePairSearch {
        domain: DistributionSpec,
        radius: f64,
        #[serde(default = "default_restarts")]
        restarts: usize,
        #[serde(default = "default_batch_pairs")]
        batch_pairs: usize,
        #[serde(default)]
        input_metric: InputMetric,
        #[serde(default)]
        output_metric: OutputMetric,
    },
    /// Every input of a declared finite set, once each, in order.
    Enumerate { inputs: Vec<ModelInput> },
}

impl SamplingStrategy {
    /// Tag written on every record drawn by this strategy.
    pub fn tag(&self) -> &'static str {
        match self {
            SamplingStrategy::Iid { .. } => "iid",
            SamplingStrategy::Stratified { .. } => "stratified",
            SamplingStrategy::AdaptivePairSearch { .. } => "adaptive_pair_search",
            SamplingStrategy::Enumerate { .. } => "enumerate",
        }
    }

    /// The declared input distribution (`D`, or the restart law for adaptive
    /// search). Enumeration has none.
    pub fn distribution(&self) -> Option<&DistributionSpec> {
        match self {
            SamplingStrategy::Iid { distribution } => Some(distribution),
            SamplingStrategy::Stratified { base, .. } => Some(base),
            SamplingStrategy::AdaptivePairSearch { domain, .. } => Some(domain),
            SamplingStrategy::Enumerate { .. } => None,
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, SamplingStrategy::AdaptivePairSearch { .. })
    }

    pub fn validate(&self, schema: &InputSchema) -> Result<(), EvidenceError> {
        match self {
            SamplingStrategy::Iid { distribution } => distribution.covers(schema, true),
            SamplingStrategy::Stratified { base, quotas } => {
                if let Some(group) = quotas.keys().find(|g| !schema.groups.contains(g)) {
                    return Err(EvidenceError::QuotaInfeasible { group: group.clone() });
                }
                base.covers(schema, false)
            }
            SamplingStrategy::AdaptivePairSearch { domain, radius, restarts, batch_pairs, .. } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(EvidenceError::Strategy("perturbation radius must be positive".into()));
                }
                if *batch_pairs == 0 {
                    return Err(EvidenceError::Strategy("batch_pairs must be positive".into()));
                }
                if 2 * restarts > *batch_pairs {
                    return Err(EvidenceError::Strategy(
                        "restarts may use at most half of each batch".into(),
                    ));
                }
                domain.covers(schema, true)
            }
            SamplingStrategy::Enumerate { inputs } => {
                for x in inputs {
                    schema.check(x).map_err(|e| EvidenceError::distribution(&e.field, e.reason))?;
                }
                Ok(())
            }
        }
    }
}

/// Query allowance for one audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBudget {
    max_queries: usize,
    spent: usize,
}

impl QueryBudget {
    pub fn new(max_queries: usize) -> Result<Self, EvidenceError> {
        if max_queries == 0 {
            return Err(EvidenceError::EmptyBudget);
        }
        Ok(Self { max_queries, spent: 0 })
    }

    pub fn unlimited() -> Self {
        Self { max_queries: usize::MAX, spent: 0 }
    }

    pub fn max_queries(&self) -> usize {
        self.max_queries
    }

    pub fn spent(&self) -> usize {
        self.spent
    }

    pub fn remaining(&self) -> usize {
        self.max_queries - self.spent
    }

    /// Reserve up to `wanted` queries; returns how many were granted.
    pub fn grant(&mut self, wanted: usize) -> usize {
        let granted = wanted.min(self.remaining());
        self.spent += granted;
        debug_assert!(self.spent <= self.max_queries);
        granted
    }
}

/// One logged pair `(x_i, f(x_i))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub index: usize,
    pub input: ModelInput,
    pub output: ModelOutput,
    pub strategy_tag: String,
    pub seed: QuerySeed,
    pub replayable: bool,
}

/// Marker for evidence cut short by the query budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    pub requested: usize,
    pub obtained: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub audit_seed: u64,
    pub model: ModelDescriptor,
    pub strategy: SamplingStrategy,
    pub requested: usize,
    #[serde(default)]
    pub exclusions: Vec<String>,
    #[serde(default)]
    pub truncation: Option<Truncation>,
    /// Responses outside the declared output space, in query order.
    #[serde(default)]
    pub anomalies: Vec<Anomaly>,
    pub queries_spent: usize,
    pub cost: f64,
}

/// The auditor's evidence `E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub records: Vec<QueryRecord>,
    pub provenance: Provenance,
}

impl Evidence {
    pub fn empty(model: &ModelDescriptor, strategy: &SamplingStrategy, requested: usize, seed: u64) -> Self {
        Self {
            records: Vec::new(),
            provenance: Provenance {
                audit_seed: seed,
                model: model.clone(),
                strategy: strategy.clone(),
                requested,
                exclusions: Vec::new(),
                truncation: None,
                anomalies: Vec::new(),
                queries_spent: 0,
                cost: 0.0,
            },
        }
    }

    /// `N`.
    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn is_truncated(&self) -> bool {
        self.provenance.truncation.is_some()
    }

    /// Whether every record could be reproduced by re-querying.
    pub fn replayable(&self) -> bool {
        self.records.iter().all(|r| r.replayable) && self.provenance.model.replayable
    }

    /// Check the structural invariants: contiguous indices and tags that
    /// resolve to the recorded strategy.
    pub fn check(&self) -> Result<(), EvidenceError> {
        let tag = self.provenance.strategy.tag();
        for (i, r) in self.records.iter().enumerate() {
            if r.index != i {
                return Err(EvidenceError::Format(format!("record {i} carries index {}", r.index)));
            }
            if r.strategy_tag != tag {
                return Err(EvidenceError::Format(format!(
                    "record {i} tagged {:?}, provenance strategy is {tag:?}",
                    r.strategy_tag
                )));
            }
        }
        Ok(())
    }

    /// Query `inputs` in order and append the results. Query ordinals continue
    /// from `provenance.queries_spent`; parallel chunks are committed in input order.
    pub(crate) fn query_and_append(
        &mut self,
        model: &dyn BlackBoxModel,
        inputs: &[ModelInput],
        query_seed_base: u64,
    ) -> Result<(), EvidenceError> {
        let first = self.provenance.queries_spent;
        let seeds: Vec<QuerySeed> =
            (0..inputs.len()).map(|k| QuerySeed(derive(query_seed_base, (first + k) as u64))).collect();
        let chunks: Vec<_> = inputs
            .par_chunks(QUERY_CHUNK)
            .zip(seeds.par_chunks(QUERY_CHUNK))
            .map(|(xs, ss)| query_batch(model, xs, ss))
            .collect();
        let desc = model.descriptor();
        let tag = self.provenance.strategy.tag();
        let mut ordinal = first;
        for (chunk_no, chunk) in chunks.into_iter().enumerate() {
            let chunk = chunk.map_err(|e| match e {
                QueryError::Schema { index, source } => {
                    QueryError::Schema { index: first + chunk_no * QUERY_CHUNK + index, source }
                }
                other => other,
            })?;
            for result in chunk {
                match result {
                    Ok(output) => {
                        let index = self.records.len();
                        self.records.push(QueryRecord {
                            index,
                            input: inputs[ordinal - first].clone(),
                            output,
                            strategy_tag: tag.to_string(),
                            seed: seeds[ordinal - first],
                            replayable: desc.replayable,
                        });
                    }
                    Err(anomaly) => {
                        self.provenance.anomalies.push(Anomaly { query_index: ordinal, ..anomaly });
                    }
                }
                ordinal += 1;
            }
        }
        self.provenance.queries_spent = ordinal;
        self.provenance.cost = ordinal as f64 * desc.cost_per_query;
        Ok(())
    }
}

/// Draw `n` inputs for a non-adaptive strategy. Input `i` uses its own seed
/// stream, so the draw does not depend on how the work is scheduled.
pub fn draw_inputs(
    strategy: &SamplingStrategy,
    schema: &InputSchema,
    n: usize,
    seed: u64,
) -> Result<Vec<ModelInput>, EvidenceError> {
    strategy.validate(schema)?;
    let base = derive(seed, stream::INPUTS);
    let rng = |i: usize| ChaCha8Rng::seed_from_u64(derive(base, i as u64));
    match strategy {
        SamplingStrategy::Iid { distribution } => {
            Ok((0..n).into_par_iter().map(|i| distribution.sample(schema, &mut rng(i))).collect())
        }
        SamplingStrategy::Stratified { base: dist, quotas } => {
            let total: usize = quotas.values().sum();
            if total != n {
                return Err(EvidenceError::QuotaMismatch { quotas: total, requested: n });
            }
            let groups: Vec<&String> =
                quotas.iter().flat_map(|(g, &q)| std::iter::repeat(g).take(q)).collect();
            Ok(groups
                .into_par_iter()
                .enumerate()
                .map(|(i, g)| {
                    let mut x = dist.sample(schema, &mut rng(i));
                    x.group = Some(g.clone());
                    x
                })
                .collect())
        }
        SamplingStrategy::Enumerate { inputs } => {
            if inputs.len() != n {
                return Err(EvidenceError::Strategy(format!(
                    "enumeration covers {} inputs, {n} requested",
                    inputs.len()
                )));
            }
            Ok(inputs.clone())
        }
        SamplingStrategy::AdaptivePairSearch { .. } => Err(EvidenceError::Strategy(
            "adaptive strategies propose inputs round by round (see adaptive_next)".into(),
        )),
    }
}

/// Gather evidence: draw inputs, spend budget, query, log.
///
/// When the budget runs out first, the partial evidence is returned with a
/// [`Truncation`] marker instead of an error.
pub fn collect(
    model: &dyn BlackBoxModel,
    strategy: &SamplingStrategy,
    n: usize,
    budget: &mut QueryBudget,
    seed: u64,
) -> Result<Evidence, EvidenceError> {
    let desc = model.descriptor();
    let mut evidence = Evidence::empty(desc, strategy, n, seed);
    let query_base = derive(seed, stream::QUERIES);
    let truncation = |obtained: usize, budget: &QueryBudget| Truncation {
        requested: n,
        obtained,
        reason: format!("query budget exhausted ({} of {} queries spent)", budget.spent(), budget.max_queries()),
    };

    if !strategy.is_adaptive() {
        let inputs = draw_inputs(strategy, &desc.schema, n, seed)?;
        let granted = budget.grant(n);
        evidence.query_and_append(model, &inputs[..granted], query_base)?;
        if granted < n {
            evidence.provenance.truncation = Some(truncation(granted, budget));
        }
        return Ok(evidence);
    }

    strategy.validate(&desc.schema)?;
    let adaptive_base = derive(seed, stream::ADAPTIVE);
    let mut round = 0u64;
    while evidence.provenance.queries_spent < n {
        let proposals = adaptive_next(&evidence, strategy, derive(adaptive_base, round))?;
        if proposals.is_empty() {
            break;
        }
        let want = proposals.len().min(n - evidence.provenance.queries_spent);
        let granted = budget.grant(want);
        evidence.query_and_append(model, &proposals[..granted], query_base)?;
        if granted < want {
            let obtained = evidence.provenance.queries_spent;
            evidence.provenance.truncation = Some(truncation(obtained, budget));
            break;
        }
        round += 1;
    }
    Ok(evidence)
}

//! Adaptive pair search for difference-quotient violations.
//!
//! Each round looks at every logged pair, takes the one with the largest
//! `D(f(x), f(x')) / d(x, x')`, and proposes perturbed copies of both
//! endpoints (Gaussian step, clipped to the radius, projected to the domain),
//! plus a few seeded random restart pairs. Numeric features are perturbed;
//! categorical features and the group are kept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DistributionSpec, Evidence, EvidenceError, SamplingStrategy};
use crate::blackbox::{FeatureKind, InputSchema, ModelInput, Value};
use crate::criteria::scan_pairs;

fn numeric_distance(schema: &InputSchema, a: &ModelInput, b: &ModelInput) -> f64 {
    schema
        .features
        .iter()
        .filter(|(_, k)| matches!(k, FeatureKind::Numeric { .. }))
        .map(|(name, _)| {
            let d = a.num(name).unwrap_or(0.0) - b.num(name).unwrap_or(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

struct Perturber<'a> {
    schema: &'a InputSchema,
    radius: f64,
}

impl Perturber<'_> {
    fn numeric(&self) -> impl Iterator<Item = (&String, &FeatureKind)> {
        self.schema.features.iter().filter(|(_, k)| matches!(k, FeatureKind::Numeric { .. }))
    }

    fn shifted(&self, anchor: &ModelInput, step: &[f64], scale: f64) -> ModelInput {
        let mut x = anchor.clone();
        for ((name, kind), s) in self.numeric().zip(step) {
            let v = anchor.num(name).unwrap_or(0.0) + scale * s;
            x.features.insert(name.clone(), Value::Num(kind.project(v)));
        }
        x
    }

    /// A point within `radius` of `anchor` (Euclidean over numeric features).
    fn perturb<R: Rng>(&self, anchor: &ModelInput, rng: &mut R) -> ModelInput {
        let mut step: Vec<f64> =
            self.numeric().map(|_| rng.sample::<f64, _>(StandardNormal) * self.radius / 2.0).collect();
        let norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
        if norm > self.radius {
            step.iter_mut().for_each(|s| *s *= self.radius / norm);
        }
        let mut scale = 1.0;
        for _ in 0..30 {
            let x = self.shifted(anchor, &step, scale);
            if numeric_distance(self.schema, &x, anchor) <= self.radius {
                return x;
            }
            scale /= 2.0;
        }
        anchor.clone()
    }

    /// Move `x` one lattice step (or a small fraction of the radius on
    /// continuous features) so that it differs from `other`, staying within
    /// `radius` of `anchor`.
    fn separate(&self, x: ModelInput, other: &ModelInput, anchor: &ModelInput) -> ModelInput {
        if &x != other {
            return x;
        }
        for (name, kind) in self.numeric() {
            let FeatureKind::Numeric { min, max, step } = *kind else { continue };
            let h = step.unwrap_or(self.radius * 1e-3);
            let v = x.num(name).unwrap_or(0.0);
            for cand in [v + h, v - h] {
                if cand < min || cand > max {
                    continue;
                }
                let mut y = x.clone();
                y.features.insert(name.clone(), Value::Num(kind.project(cand)));
                if &y != other && numeric_distance(self.schema, &y, anchor) <= self.radius {
                    return y;
                }
            }
        }
        x
    }
}

fn restart_pair<R: Rng>(p: &Perturber<'_>, domain: &DistributionSpec, rng: &mut R) -> [ModelInput; 2] {
    let x = domain.sample(p.schema, rng);
    let y = p.perturb(&x, rng);
    let y = p.separate(y, &x, &x);
    [x, y]
}

/// Propose the next batch of query pairs (flattened: `[x_0, x'_0, x_1, x'_1, ...]`).
///
/// With no informative pair logged yet (empty evidence, or every quotient
/// zero) the whole batch is random restarts. Otherwise `batch_pairs - restarts`
/// pairs are local perturbations of the current best pair.
pub fn adaptive_next(
    evidence: &Evidence,
    strategy: &SamplingStrategy,
    seed: u64,
) -> Result<Vec<ModelInput>, EvidenceError> {
    let SamplingStrategy::AdaptivePairSearch { domain, radius, restarts, batch_pairs, input_metric, output_metric } =
        strategy
    else {
        return Err(EvidenceError::Strategy("adaptive_next requires an adaptive strategy".into()));
    };
    let schema = &evidence.provenance.model.schema;
    strategy.validate(schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Perturber { schema, radius: *radius };

    let best = scan_pairs(&evidence.records, input_metric, output_metric)
        .best
        .filter(|w| w.quotient.is_some_and(|q| q > 0.0));
    let mut out = Vec::with_capacity(2 * batch_pairs);
    let fresh = match &best {
        Some(w) => {
            let a = &evidence.records[w.first].input;
            let b = &evidence.records[w.second].input;
            for _ in 0..(batch_pairs - restarts) {
                let x = p.perturb(a, &mut rng);
                let y = p.perturb(b, &mut rng);
                let y = p.separate(y, &x, b);
                out.push(x);
                out.push(y);
            }
            *restarts
        }
        None => *batch_pairs,
    };
    for _ in 0..fresh {
        out.extend(restart_pair(&p, domain, &mut rng));
    }
    Ok(out)
}

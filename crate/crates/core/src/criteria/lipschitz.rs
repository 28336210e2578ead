//! Difference-quotient scans for individual fairness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CriterionError, CriterionEstimate, IndividualFairness};
use crate::blackbox::{ModelInput, Value};
use crate::evidence::{Evidence, QueryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    Euclidean,
    Manhattan,
    Chebyshev,
}

fn default_mismatch() -> f64 {
    1.0
}

/// Input metric `d`: numeric differences plus a fixed penalty per mismatched
/// categorical feature (the group attribute counts as one), combined by `norm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputMetric {
    #[serde(default)]
    pub norm: Norm,
    #[serde(default = "default_mismatch")]
    pub categorical_mismatch: f64,
}

impl Default for InputMetric {
    fn default() -> Self {
        Self { norm: Norm::Euclidean, categorical_mismatch: 1.0 }
    }
}

impl InputMetric {
    pub fn distance(&self, a: &ModelInput, b: &ModelInput) -> f64 {
        let mut parts = Vec::with_capacity(a.features.len() + 1);
        let mut ib = b.features.iter().peekable();
        for (name, va) in &a.features {
            while ib.peek().is_some_and(|(k, _)| k.as_str() < name.as_str()) {
                ib.next();
                parts.push(self.categorical_mismatch);
            }
            match ib.peek() {
                Some((k, vb)) if *k == name => {
                    parts.push(match (va, vb) {
                        (Value::Num(x), Value::Num(y)) => (x - y).abs(),
                        (x, y) if x == *y => 0.0,
                        _ => self.categorical_mismatch,
                    });
                    ib.next();
                }
                _ => parts.push(self.categorical_mismatch),
            }
        }
        parts.extend(ib.map(|_| self.categorical_mismatch));
        if a.group != b.group {
            parts.push(self.categorical_mismatch);
        }
        match self.norm {
            Norm::Euclidean => parts.iter().map(|p| p * p).sum::<f64>().sqrt(),
            Norm::Manhattan => parts.iter().sum(),
            Norm::Chebyshev => parts.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Output metric `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMetric {
    /// `|y - y'|` on numbers; 0/1 on labels.
    #[default]
    Absolute,
    /// 0 if equal, 1 otherwise.
    Discrete,
}

impl OutputMetric {
    pub fn distance(&self, a: &Value, b: &Value) -> f64 {
        match (self, a, b) {
            (OutputMetric::Absolute, Value::Num(x), Value::Num(y)) => (x - y).abs(),
            _ => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

/// A logged pair and its distances. `first` and `second` are record indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairWitness {
    pub first: usize,
    pub second: usize,
    pub input_distance: f64,
    pub output_distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quotient: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairScan {
    /// Largest quotient over pairs with positive input distance; the
    /// lexicographically first pair wins ties.
    pub best: Option<PairWitness>,
    pub pairs: usize,
    pub degenerate: usize,
    pub zero_distance_violation: Option<PairWitness>,
}

/// Scan all `N (N - 1) / 2` record pairs.
pub fn scan_pairs(records: &[QueryRecord], input: &InputMetric, output: &OutputMetric) -> PairScan {
    let n = records.len();
    let rows: Vec<PairScan> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = PairScan::default();
            let ri = &records[i];
            for (j, rj) in records.iter().enumerate().skip(i + 1) {
                row.pairs += 1;
                let dx = input.distance(&ri.input, &rj.input);
                let dy = output.distance(&ri.output.value, &rj.output.value);
                if dx <= 0.0 {
                    row.degenerate += 1;
                    if dy > 0.0 && row.zero_distance_violation.is_none() {
                        row.zero_distance_violation = Some(PairWitness {
                            first: i,
                            second: j,
                            input_distance: dx,
                            output_distance: dy,
                            quotient: None,
                        });
                    }
                    continue;
                }
                let q = dy / dx;
                if row.best.as_ref().map_or(true, |b| q > b.quotient.unwrap_or(f64::NEG_INFINITY)) {
                    row.best = Some(PairWitness {
                        first: i,
                        second: j,
                        input_distance: dx,
                        output_distance: dy,
                        quotient: Some(q),
                    });
                }
            }
            row
        })
        .collect();
    rows.into_iter().fold(PairScan::default(), |mut acc, row| {
        acc.pairs += row.pairs;
        acc.degenerate += row.degenerate;
        if acc.zero_distance_violation.is_none() {
            acc.zero_distance_violation = row.zero_distance_violation;
        }
        if let Some(b) = row.best {
            if acc.best.as_ref().map_or(true, |a| b.quotient > a.quotient) {
                acc.best = Some(b);
            }
        }
        acc
    })
}

/// Lower bound on `g(f)` from the largest logged difference quotient.
///
/// Finite evidence can only exhibit a violation, never rule one out, so the
/// estimate always carries `lower_bound = true`.
pub fn lipschitz_lower_bound(
    evidence: &Evidence,
    criterion: &IndividualFairness,
) -> Result<CriterionEstimate, CriterionError> {
    let n = evidence.n();
    if n < 2 {
        return Err(CriterionError::TooFewRecords { needed: 2, found: n });
    }
    let scan = scan_pairs(&evidence.records, &criterion.input_metric, &criterion.output_metric);
    let best = scan.best.ok_or(CriterionError::AllPairsDegenerate { pairs: scan.pairs })?;
    let q = best.quotient.expect("nondegenerate pairs carry a quotient");
    let mut est = CriterionEstimate::new("individual_fairness", q - criterion.lipschitz, n);
    est.lower_bound = true;
    est.witness = Some(best);
    est.degenerate_pairs = scan.degenerate;
    est.zero_distance_violation = scan.zero_distance_violation;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;
    use crate::blackbox::{make_synthetic, FeatureKind, ScoreMap, SyntheticKind, SyntheticModelSpec};
    use crate::evidence::{collect, DistributionSpec, Marginal, QueryBudget, SamplingStrategy};

    fn score_model(map: ScoreMap, step: f64, out_max: f64, out_steps: u32) -> crate::blackbox::SyntheticModel {
        make_synthetic(&SyntheticModelSpec::new(
            SyntheticKind::ScoreFunction {
                feature: "x".into(),
                min: 0.0,
                max: 1.0,
                step: Some(step),
                map,
                output_min: 0.0,
                output_max: out_max,
                output_steps: out_steps,
            },
            1.0,
        ))
        .unwrap()
        .model
    }

    fn iid_evidence(model: &crate::blackbox::SyntheticModel, n: usize, seed: u64) -> Evidence {
        let s = SamplingStrategy::Iid {
            distribution: DistributionSpec {
                features: BTreeMap::from([("x".into(), Marginal::Uniform { min: 0.0, max: 1.0 })]),
                groups: None,
            },
        };
        collect(model, &s, n, &mut QueryBudget::unlimited(), seed).unwrap()
    }

    fn criterion(l: f64) -> IndividualFairness {
        IndividualFairness { output_metric: OutputMetric::Absolute, input_metric: InputMetric::default(), lipschitz: l }
    }

    /// Exhaustive quotient maximum over every lattice pair, computed from the
    /// closed-form map snapped to the output grid.
    fn dense_grid_max(map: &ScoreMap, step: f64, out_max: f64, out_steps: u32) -> f64 {
        let kind = FeatureKind::Numeric { min: 0.0, max: 1.0, step: Some(step) };
        let xs = kind.lattice().unwrap();
        let h = out_max / out_steps as f64;
        let ys: Vec<f64> = xs.iter().map(|&x| (map.eval(x).clamp(0.0, out_max) / h).round() * h).collect();
        let mut best: f64 = 0.0;
        for i in 0..xs.len() {
            for j in i + 1..xs.len() {
                best = best.max((ys[i] - ys[j]).abs() / (xs[i] - xs[j]).abs());
            }
        }
        best
    }

    #[test]
    fn constant_model_gives_minus_l() {
        let m = score_model(ScoreMap::Constant { value: 0.5 }, 0.01, 1.0, 100);
        let est = lipschitz_lower_bound(&iid_evidence(&m, 50, 1), &criterion(0.7)).unwrap();
        assert_eq!(est.g_hat, -0.7);
        assert!(est.lower_bound);
    }

    #[test]
    fn doubling_map_gives_quotient_two() {
        let m = score_model(ScoreMap::Linear { slope: 2.0, intercept: 0.0 }, 0.001, 2.0, 2000);
        let est = lipschitz_lower_bound(&iid_evidence(&m, 40, 2), &criterion(1.0)).unwrap();
        assert!((est.g_hat - 1.0).abs() < 1e-9, "{}", est.g_hat);
        let w = est.witness.unwrap();
        assert!(w.first < w.second);
    }

    #[test]
    fn degenerate_pairs_are_skipped_and_counted() {
        let m = score_model(ScoreMap::Linear { slope: 1.0, intercept: 0.0 }, 0.5, 1.0, 2);
        // lattice {0, 0.5, 1}: 30 draws must repeat points
        let ev = iid_evidence(&m, 30, 3);
        let est = lipschitz_lower_bound(&ev, &criterion(1.0)).unwrap();
        assert!(est.degenerate_pairs > 0);
        assert!(est.zero_distance_violation.is_none());
    }

    #[test]
    fn all_degenerate_is_refused() {
        let m = score_model(ScoreMap::Linear { slope: 1.0, intercept: 0.0 }, 0.5, 1.0, 2);
        let s = SamplingStrategy::Iid {
            distribution: DistributionSpec::point_mass(BTreeMap::from([("x".into(), Value::Num(0.5))])),
        };
        let ev = collect(&m, &s, 5, &mut QueryBudget::unlimited(), 0).unwrap();
        assert_eq!(
            lipschitz_lower_bound(&ev, &criterion(1.0)).unwrap_err(),
            CriterionError::AllPairsDegenerate { pairs: 10 }
        );
        let one = collect(&m, &s, 1, &mut QueryBudget::unlimited(), 0).unwrap();
        assert!(matches!(lipschitz_lower_bound(&one, &criterion(1.0)), Err(CriterionError::TooFewRecords { .. })));
    }

    #[test]
    fn random_piecewise_model_stays_below_the_dense_grid_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for trial in 0..5 {
            let knots: Vec<[f64; 2]> = (0..=5).map(|k| [k as f64 / 5.0, rng.gen::<f64>()]).collect();
            let map = ScoreMap::Piecewise { knots };
            let true_l = map.lipschitz();
            let m = score_model(map.clone(), 0.01, 1.0, 1000);
            let ev = iid_evidence(&m, 1000, 100 + trial);
            let est = lipschitz_lower_bound(&ev, &criterion(1.0)).unwrap();
            let oracle = dense_grid_max(&map, 0.01, 1.0, 1000);
            let found = est.g_hat + 1.0;
            assert!(found <= oracle + 1e-9, "found {found} > oracle {oracle}");
            // 1000 draws on a 101-point lattice hit every point, so the scan sees the oracle's pair
            assert!(oracle - found <= 1e-9, "found {found}, oracle {oracle}");
            // output snapping moves quotients by at most 2 * (grid step / 2) / lattice step
            assert!(found <= true_l + 0.1 + 1e-9);
        }
    }

    #[test]
    fn zero_distance_with_different_outputs_is_a_violation() {
        let a = ModelInput::new().with_feature("x", Value::Num(0.0));
        let rec = |index, y| QueryRecord {
            index,
            input: a.clone(),
            output: crate::blackbox::ModelOutput { value: Value::Num(y) },
            strategy_tag: "iid".into(),
            seed: crate::blackbox::QuerySeed(0),
            replayable: false,
        };
        let scan = scan_pairs(&[rec(0, 0.0), rec(1, 1.0)], &InputMetric::default(), &OutputMetric::Absolute);
        let v = scan.zero_distance_violation.unwrap();
        assert_eq!((v.first, v.second), (0, 1));
        assert!(scan.best.is_none());
    }

    fn arb_input() -> impl Strategy<Value = ModelInput> {
        (-5.0..5.0f64, -5.0..5.0f64, prop::bool::ANY, prop::option::of(prop::bool::ANY)).prop_map(|(x, y, c, g)| {
            let mut m = ModelInput::new()
                .with_feature("x", Value::Num(x))
                .with_feature("y", Value::Num(y))
                .with_feature("c", Value::Cat(if c { "u" } else { "v" }.into()));
            m.group = g.map(|g| if g { "G1" } else { "G2" }.to_string());
            m
        })
    }

    proptest! {
        #[test]
        fn input_metric_axioms(a in arb_input(), b in arb_input(), norm in prop_oneof![
            Just(Norm::Euclidean), Just(Norm::Manhattan), Just(Norm::Chebyshev)
        ]) {
            let d = InputMetric { norm, categorical_mismatch: 1.0 };
            prop_assert!(d.distance(&a, &b) >= 0.0);
            prop_assert_eq!(d.distance(&a, &b), d.distance(&b, &a));
            prop_assert_eq!(d.distance(&a, &a), 0.0);
        }
    }
}

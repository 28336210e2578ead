use serde::{Deserialize, Serialize};

use super::{CriterionError, CriterionEstimate, GroupRate, StatisticalParity};
use crate::blackbox::Value;
use crate::evidence::Evidence;

/// Selection counts `(k_1, n_1, k_2, n_2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityCounts {
    pub k1: u64,
    pub n1: u64,
    pub k2: u64,
    pub n2: u64,
}

impl ParityCounts {
    pub fn new(k1: u64, n1: u64, k2: u64, n2: u64) -> Self {
        assert!(k1 <= n1 && k2 <= n2, "successes exceed trials");
        Self { k1, n1, k2, n2 }
    }

    /// Tally binary outputs for the two groups.
    pub fn from_evidence(evidence: &Evidence, group_a: &str, group_b: &str) -> Result<Self, CriterionError> {
        let mut c = Self { k1: 0, n1: 0, k2: 0, n2: 0 };
        for r in &evidence.records {
            let selected = match &r.output.value {
                Value::Num(v) if *v == 1.0 => 1,
                Value::Num(v) if *v == 0.0 => 0,
                _ => return Err(CriterionError::NonBinaryOutput { index: r.index }),
            };
            match r.input.group.as_deref() {
                Some(g) if g == group_a => {
                    c.n1 += 1;
                    c.k1 += selected;
                }
                Some(g) if g == group_b => {
                    c.n2 += 1;
                    c.k2 += selected;
                }
                _ => {}
            }
        }
        for (n, g) in [(c.n1, group_a), (c.n2, group_b)] {
            if n == 0 {
                return Err(CriterionError::MissingGroup { group: g.to_string() });
            }
        }
        Ok(c)
    }

    pub fn rates(&self) -> (f64, f64) {
        (self.k1 as f64 / self.n1 as f64, self.k2 as f64 / self.n2 as f64)
    }

    /// Signed gap `r_1 - r_2`.
    pub fn diff(&self) -> f64 {
        let (r1, r2) = self.rates();
        r1 - r2
    }

    /// Two-proportion standard error `sqrt(r_1 (1 - r_1) / n_1 + r_2 (1 - r_2) / n_2)`.
    pub fn standard_error(&self) -> f64 {
        let (r1, r2) = self.rates();
        (r1 * (1.0 - r1) / self.n1 as f64 + r2 * (1.0 - r2) / self.n2 as f64).sqrt()
    }

    pub fn swapped(&self) -> Self {
        Self { k1: self.k2, n1: self.n2, k2: self.k1, n2: self.n1 }
    }

    pub(crate) fn estimate(&self, c: &StatisticalParity) -> CriterionEstimate {
        let (r1, r2) = self.rates();
        let mut est = CriterionEstimate::new("statistical_parity", (r1 - r2).abs() - c.threshold, (self.n1 + self.n2) as usize);
        est.groups = vec![
            GroupRate { group: c.group_a.clone(), selected: self.k1 as usize, total: self.n1 as usize, rate: r1 },
            GroupRate { group: c.group_b.clone(), selected: self.k2 as usize, total: self.n2 as usize, rate: r2 },
        ];
        est.standard_error = Some(self.standard_error());
        est
    }
}

/// `g_hat = |r_1 - r_2| - threshold` from the evidence's selection rates.
pub fn estimate_statistical_parity(
    evidence: &Evidence,
    criterion: &StatisticalParity,
) -> Result<CriterionEstimate, CriterionError> {
    let counts = ParityCounts::from_evidence(evidence, &criterion.group_a, &criterion.group_b)?;
    Ok(counts.estimate(criterion))
}

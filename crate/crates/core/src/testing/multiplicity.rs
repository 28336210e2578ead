use serde::{Deserialize, Serialize};

use super::TestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplicity {
    /// Family-wise error control.
    Bonferroni,
    /// False discovery rate control (step-up).
    BenjaminiHochberg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjusted {
    pub method: Multiplicity,
    pub level: f64,
    pub adjusted: Vec<f64>,
    pub reject: Vec<bool>,
}

/// Adjusted p-values and decisions, in input order.
///
/// Benjamini-Hochberg adjusted values are `min_{j >= i} m p_(j) / j` (capped at
/// 1); rejecting those at or below `level` is the step-up rule.
pub fn adjust_multiplicity(p_values: &[f64], method: Multiplicity, level: f64) -> Result<Adjusted, TestError> {
    if p_values.is_empty() {
        return Err(TestError::Invalid("no p-values to adjust".into()));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(TestError::Invalid(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len() as f64;
    let adjusted = match method {
        Multiplicity::Bonferroni => p_values.iter().map(|p| (m * p).min(1.0)).collect(),
        Multiplicity::BenjaminiHochberg => {
            let mut order: Vec<usize> = (0..p_values.len()).collect();
            order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
            let mut out = vec![0.0; p_values.len()];
            let mut running = 1.0f64;
            for (rank, &i) in order.iter().enumerate().rev() {
                running = running.min(m * p_values[i] / (rank + 1) as f64);
                out[i] = running;
            }
            out
        }
    };
    let reject = adjusted.iter().map(|&q| q <= level).collect();
    Ok(Adjusted { method, level, adjusted, reject })
}

//! Two-proportion tests of `|p_1 - p_2| <= eta` against its complement.
//!
//! Both tests standardise the observed gap with
//! `se = sqrt(r1 (1 - r1) / n1 + r2 (1 - r2) / n2)` evaluated at the
//! continuity-adjusted rates `r = (k + 0.5) / (n + 1)`, which keeps `se`
//! positive when a group is all-selected or all-rejected.
//!
//! Under presumption of compliance the null is `|p_1 - p_2| <= eta` and the
//! p-value is taken at the least favourable boundary `|p_1 - p_2| = eta`.
//! Under presumption of non-compliance the null is `|p_1 - p_2| > eta`, tested
//! by two one-sided tests (TOST) whose larger p-value is reported.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;

use super::{Decision, Presumption, TestError};
use crate::criteria::ParityCounts;

/// Smallest group size the normal approximation is trusted at.
pub const Z_MIN_GROUP: u64 = 30;
/// Largest `n_1 * n_2` the exact test will enumerate.
pub const EXACT_MAX_CELLS: u64 = 1_000_000;
/// Points per boundary line in the exact test's nuisance-parameter sweep.
pub const NUISANCE_GRID: usize = 201;
/// Statistics within this distance of the observed one count as ties.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TestResult {
    pub p_value: f64,
    pub decision: Decision,
}

impl TestResult {
    pub fn new(p_value: f64, zeta: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self { p_value, decision: Decision::from_p(p_value, zeta) }
    }
}

pub(crate) fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn adjusted_se(k1: u64, n1: u64, k2: u64, n2: u64) -> f64 {
    let var = |k: u64, n: u64| {
        let r = (k as f64 + 0.5) / (n as f64 + 1.0);
        r * (1.0 - r) / n as f64
    };
    (var(k1, n1) + var(k2, n2)).sqrt()
}

pub(crate) fn check_args(eta: f64, zeta: f64) -> Result<(), TestError> {
    if !(0.0..1.0).contains(&eta) {
        return Err(TestError::Invalid(format!("threshold eta = {eta} must lie in [0, 1)")));
    }
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(TestError::Invalid(format!("significance = {zeta} must lie in (0, 1)")));
    }
    Ok(())
}

/// Normal-approximation p-value without the sample-size guard. Used by the
/// guarded [`boundary_z_test`] and for cross-checks against the exact test.
pub fn boundary_z_p_value(c: ParityCounts, eta: f64, presumption: Presumption) -> f64 {
    if c.n1 == 0 || c.n2 == 0 {
        return 1.0;
    }
    let phi = std_normal();
    let d = c.diff();
    let se = adjusted_se(c.k1, c.n1, c.k2, c.n2);
    let p = match presumption {
        Presumption::Compliance => {
            // P(|D| >= |d|) with D ~ N(eta, se^2); the -eta boundary is its mirror image
            let t = d.abs();
            phi.sf((t - eta) / se) + phi.cdf((-t - eta) / se)
        }
        Presumption::NonCompliance => {
            let upper = phi.cdf((d - eta) / se);
            let lower = phi.sf((d + eta) / se);
            upper.max(lower)
        }
    };
    p.clamp(0.0, 1.0)
}

/// Boundary z-test. Refuses groups smaller than [`Z_MIN_GROUP`].
pub fn boundary_z_test(c: ParityCounts, eta: f64, zeta: f64, presumption: Presumption) -> Result<TestResult, TestError> {
    check_args(eta, zeta)?;
    if c.n1 < Z_MIN_GROUP || c.n2 < Z_MIN_GROUP {
        return Err(TestError::UseExactTest { n1: c.n1, n2: c.n2 });
    }
    Ok(TestResult::new(boundary_z_p_value(c, eta, presumption), zeta))
}

fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        let mut v = vec![0.0; n as usize + 1];
        v[0] = 1.0;
        return v;
    }
    if p >= 1.0 {
        let mut v = vec![0.0; n as usize + 1];
        v[n as usize] = 1.0;
        return v;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    (0..=n).map(|k| (ln_binomial(n, k) + k as f64 * lp + (n - k) as f64 * lq).exp()).collect()
}

/// Nuisance points `(p_1, p_2)` on the line `p_1 - p_2 = delta`, endpoints included.
fn boundary_line(delta: f64) -> impl Iterator<Item = (f64, f64)> {
    let span = 1.0 - delta.abs();
    (0..NUISANCE_GRID).map(move |g| {
        let lo = g as f64 / (NUISANCE_GRID - 1) as f64 * span;
        if delta >= 0.0 {
            (lo + delta, lo)
        } else {
            (lo, lo - delta)
        }
    })
}

/// For every outcome `o`, `sup` over the line of `P(stat >= stat[o] - tol)`.
fn sup_upper_tail(stat: &[f64], n1: u64, n2: u64, delta: f64, out: &mut [f64]) {
    let w2 = n2 as usize + 1;
    let mut order: Vec<usize> = (0..stat.len()).collect();
    order.sort_by(|&a, &b| stat[b].total_cmp(&stat[a]));
    // cut[o]: how many outcomes (in descending order) are at least stat[o] - tol
    let sorted: Vec<f64> = order.iter().map(|&o| stat[o]).collect();
    let cut: Vec<usize> = stat.iter().map(|&s| sorted.partition_point(|&x| x >= s - TIE_TOLERANCE)).collect();
    let mut prefix = vec![0.0; stat.len() + 1];
    for (p1, p2) in boundary_line(delta) {
        let (a, b) = (binomial_pmf(n1, p1), binomial_pmf(n2, p2));
        for (i, &o) in order.iter().enumerate() {
            prefix[i + 1] = prefix[i] + a[o / w2] * b[o % w2];
        }
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = slot.max(prefix[cut[o]]);
        }
    }
}

fn exact_table(n1: u64, n2: u64, eta: f64, presumption: Presumption) -> Vec<f64> {
    let w2 = n2 as usize + 1;
    let cells = (n1 as usize + 1) * w2;
    let outcome = |o: usize| ((o / w2) as u64, (o % w2) as u64);
    let gap_se = |o: usize| {
        let (k1, k2) = outcome(o);
        (k1 as f64 / n1 as f64 - k2 as f64 / n2 as f64, adjusted_se(k1, n1, k2, n2))
    };
    let mut p = vec![0.0; cells];
    match presumption {
        Presumption::Compliance => {
            let stat: Vec<f64> = (0..cells).map(|o| { let (d, se) = gap_se(o); (d.abs() - eta) / se }).collect();
            sup_upper_tail(&stat, n1, n2, eta, &mut p);
            if eta > 0.0 {
                sup_upper_tail(&stat, n1, n2, -eta, &mut p);
            }
        }
        Presumption::NonCompliance => {
            // lower tail of (d - eta) / se at p1 - p2 = eta, via the negated statistic
            let upper: Vec<f64> = (0..cells).map(|o| { let (d, se) = gap_se(o); -(d - eta) / se }).collect();
            let lower: Vec<f64> = (0..cells).map(|o| { let (d, se) = gap_se(o); (d + eta) / se }).collect();
            let mut pu = vec![0.0; cells];
            sup_upper_tail(&upper, n1, n2, eta, &mut pu);
            sup_upper_tail(&lower, n1, n2, -eta, &mut p);
            for (a, b) in p.iter_mut().zip(pu) {
                *a = a.max(b);
            }
        }
    }
    p.iter_mut().for_each(|x| *x = x.min(1.0));
    p
}

type TableKey = (u64, u64, u64, Presumption);

fn cached_table(n1: u64, n2: u64, eta: f64, presumption: Presumption) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<TableKey, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (n1, n2, eta.to_bits(), presumption);
    if let Some(t) = cache.lock().expect("cache lock").get(&key) {
        return t.clone();
    }
    let table = Arc::new(exact_table(n1, n2, eta, presumption));
    cache.lock().expect("cache lock").entry(key).or_insert(table).clone()
}

/// Exact unconditional p-value by full enumeration of the joint binomial
/// outcomes, maximised over the nuisance parameter along the boundary of the
/// null (a [`NUISANCE_GRID`]-point sweep of each boundary line).
pub fn exact_p_value(c: ParityCounts, eta: f64, presumption: Presumption) -> Result<f64, TestError> {
    if c.n1 == 0 || c.n2 == 0 {
        return Ok(1.0);
    }
    if c.n1.saturating_mul(c.n2) > EXACT_MAX_CELLS {
        return Err(TestError::UseZTest { n1: c.n1, n2: c.n2 });
    }
    let table = cached_table(c.n1, c.n2, eta, presumption);
    Ok(table[c.k1 as usize * (c.n2 as usize + 1) + c.k2 as usize])
}

pub fn exact_binomial_boundary_test(
    c: ParityCounts,
    eta: f64,
    zeta: f64,
    presumption: Presumption,
) -> Result<TestResult, TestError> {
    check_args(eta, zeta)?;
    Ok(TestResult::new(exact_p_value(c, eta, presumption)?, zeta))
}

/// Exact probability that [`exact_binomial_boundary_test`] rejects when the
/// true rates are `(p1, p2)`.
pub fn exact_rejection_probability(
    n1: u64,
    n2: u64,
    p1: f64,
    p2: f64,
    eta: f64,
    zeta: f64,
    presumption: Presumption,
) -> Result<f64, TestError> {
    check_args(eta, zeta)?;
    if n1.saturating_mul(n2) > EXACT_MAX_CELLS {
        return Err(TestError::UseZTest { n1, n2 });
    }
    let table = cached_table(n1, n2, eta, presumption);
    let (a, b) = (binomial_pmf(n1, p1), binomial_pmf(n2, p2));
    let w2 = n2 as usize + 1;
    Ok(table
        .iter()
        .enumerate()
        .filter(|(_, &p)| p <= zeta)
        .map(|(o, _)| a[o / w2] * b[o % w2])
        .sum())
}

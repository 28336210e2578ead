//! Selection rates, scoring rates, median scores and impact ratios per
//! demographic category, including intersectional cells.
//!
//! Column semantics (stable; used by both CSV and JSON exports):
//!
//! * `selection_rate = selected / selection_total` over rows carrying a selection flag.
//! * `scoring_rate = above_median / scored` where `above_median` counts scores
//!   strictly greater than the pooled median of the whole table.
//! * `impact_ratio = rate / max(rate)` over the non-empty cells of the same table.
//! * Cells with no members have `status = "empty"` and no rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CriterionError, ImpactMetrics};
use crate::blackbox::{OutputSpace, Value};
use crate::evidence::Evidence;

/// One row of a historical or generated table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRow {
    pub categories: BTreeMap<String, String>,
    pub selected: Option<bool>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStat {
    pub numerator: usize,
    pub denominator: usize,
    pub rate: f64,
    pub impact_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: String,
    pub count: usize,
    pub selection: Option<RateStat>,
    pub scoring: Option<RateStat>,
    pub median_score: Option<f64>,
    /// `ok`, `empty`, or a caller-assigned marker such as `insufficient data`.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisTable {
    /// Axis name; intersections join the axis names with `|`.
    pub axis: String,
    pub pooled_median_score: Option<f64>,
    pub cells: Vec<CategoryMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: usize,
    pub tables: Vec<AxisTable>,
}

/// Median; the mean of the two central order statistics for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

fn set_ratios(cells: &mut [CategoryMetrics], pick: fn(&mut CategoryMetrics) -> &mut Option<RateStat>) {
    let max = cells.iter_mut().filter_map(|c| pick(c).as_ref().map(|s| s.rate)).fold(f64::NEG_INFINITY, f64::max);
    for c in cells.iter_mut() {
        if let Some(s) = pick(c) {
            s.impact_ratio = (max > 0.0).then(|| s.rate / max);
        }
    }
}

fn tabulate(axis: String, levels: Vec<String>, key: impl Fn(&ImpactRow) -> String, rows: &[ImpactRow], pooled: Option<f64>) -> AxisTable {
    let mut cells: Vec<CategoryMetrics> = levels
        .into_iter()
        .map(|level| {
            let members: Vec<&ImpactRow> = rows.iter().filter(|r| key(r) == level).collect();
            let flags: Vec<bool> = members.iter().filter_map(|r| r.selected).collect();
            let scores: Vec<f64> = members.iter().filter_map(|r| r.score).collect();
            let rate = |num: usize, den: usize| {
                (den > 0).then(|| RateStat { numerator: num, denominator: den, rate: num as f64 / den as f64, impact_ratio: None })
            };
            let above = pooled.map_or(0, |m| scores.iter().filter(|&&s| s > m).count());
            CategoryMetrics {
                category: level,
                count: members.len(),
                selection: rate(flags.iter().filter(|&&f| f).count(), flags.len()),
                scoring: rate(above, scores.len()),
                median_score: median(&scores),
                status: if members.is_empty() { "empty" } else { "ok" }.to_string(),
            }
        })
        .collect();
    set_ratios(&mut cells, |c| &mut c.selection);
    set_ratios(&mut cells, |c| &mut c.scoring);
    AxisTable { axis, pooled_median_score: pooled, cells }
}

/// Per-category metric tables for each axis and, when requested, for the
/// cross-product of all axes.
pub fn impact_metrics(rows: &[ImpactRow], criterion: &ImpactMetrics) -> Result<MetricTable, CriterionError> {
    if rows.is_empty() {
        return Err(CriterionError::NoRows);
    }
    if criterion.axes.is_empty() {
        return Err(CriterionError::Invalid("at least one category axis is required".into()));
    }
    for (i, r) in rows.iter().enumerate() {
        for axis in &criterion.axes {
            let level = r.categories.get(axis).ok_or_else(|| CriterionError::MissingAxis { row: i, axis: axis.clone() })?;
            if let Some(declared) = criterion.levels.get(axis) {
                if !declared.contains(level) {
                    return Err(CriterionError::UndeclaredLevel { row: i, axis: axis.clone(), level: level.clone() });
                }
            }
        }
        if r.selected.is_none() && r.score.is_none() {
            return Err(CriterionError::MissingOutcome { row: i });
        }
    }
    let levels: Vec<Vec<String>> = criterion
        .axes
        .iter()
        .map(|axis| match criterion.levels.get(axis) {
            Some(l) => l.clone(),
            None => {
                let mut seen: Vec<String> = rows.iter().map(|r| r.categories[axis].clone()).collect();
                seen.sort();
                seen.dedup();
                seen
            }
        })
        .collect();
    let scores: Vec<f64> = rows.iter().filter_map(|r| r.score).collect();
    let pooled = median(&scores);

    let mut tables: Vec<AxisTable> = criterion
        .axes
        .iter()
        .zip(&levels)
        .map(|(axis, lv)| tabulate(axis.clone(), lv.clone(), |r| r.categories[axis].clone(), rows, pooled))
        .collect();
    if criterion.intersections && criterion.axes.len() >= 2 {
        let mut product: Vec<String> = vec![String::new()];
        for (k, lv) in levels.iter().enumerate() {
            product = product
                .iter()
                .flat_map(|p| lv.iter().map(move |l| if k == 0 { l.clone() } else { format!("{p}|{l}") }))
                .collect();
        }
        let axes = &criterion.axes;
        let key = |r: &ImpactRow| axes.iter().map(|a| r.categories[a].as_str()).collect::<Vec<_>>().join("|");
        tables.push(tabulate(axes.join("|"), product, key, rows, pooled));
    }
    Ok(MetricTable { rows: rows.len(), tables })
}

/// Rows from query evidence, using the group attribute as the category on `axis`.
/// Binary output spaces yield selections; numeric outputs otherwise yield scores.
pub fn rows_from_evidence(evidence: &Evidence, axis: &str) -> Vec<ImpactRow> {
    let binary = matches!(evidence.provenance.model.output, OutputSpace::Binary);
    evidence
        .records
        .iter()
        .map(|r| {
            let mut categories = BTreeMap::new();
            if let Some(g) = &r.input.group {
                categories.insert(axis.to_string(), g.clone());
            }
            let v = match &r.output.value {
                Value::Num(v) => Some(*v),
                Value::Cat(_) => None,
            };
            ImpactRow {
                categories,
                selected: if binary { v.map(|v| v == 1.0) } else { None },
                score: if binary { None } else { v },
            }
        })
        .collect()
}

pub const CSV_COLUMNS: [&str; 13] = [
    "table",
    "category",
    "count",
    "selected",
    "selection_total",
    "selection_rate",
    "selection_impact_ratio",
    "scored_above_median",
    "scored_total",
    "scoring_rate",
    "scoring_impact_ratio",
    "median_score",
    "status",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricTable {
    /// One CSV row per cell with the stable [`CSV_COLUMNS`] header.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS).expect("in-memory write");
        for t in &self.tables {
            for c in &t.cells {
                let s = c.selection.as_ref();
                let q = c.scoring.as_ref();
                w.write_record([
                    t.axis.clone(),
                    c.category.clone(),
                    c.count.to_string(),
                    opt(s.map(|s| s.numerator)),
                    opt(s.map(|s| s.denominator)),
                    opt(s.map(|s| s.rate)),
                    opt(s.and_then(|s| s.impact_ratio)),
                    opt(q.map(|s| s.numerator)),
                    opt(q.map(|s| s.denominator)),
                    opt(q.map(|s| s.rate)),
                    opt(q.and_then(|s| s.impact_ratio)),
                    opt(c.median_score),
                    c.status.clone(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric tables serialize")
    }

    pub fn table(&self, axis: &str) -> Option<&AxisTable> {
        self.tables.iter().find(|t| t.axis == axis)
    }
}

impl AxisTable {
    pub fn cell(&self, category: &str) -> Option<&CategoryMetrics> {
        self.cells.iter().find(|c| c.category == category)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn row(cats: &[(&str, &str)], selected: Option<bool>, score: Option<f64>) -> ImpactRow {
        ImpactRow {
            categories: cats.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            selected,
            score,
        }
    }

    fn crit(axes: &[&str]) -> ImpactMetrics {
        ImpactMetrics { axes: axes.iter().map(|s| s.to_string()).collect(), levels: BTreeMap::new(), intersections: true }
    }

    #[test]
    fn ratios_are_relative_to_the_best_category() {
        let mut rows = Vec::new();
        for i in 0..4 {
            rows.push(row(&[("sex", "F")], Some(i < 2), None));
            rows.push(row(&[("sex", "M")], Some(i < 1), None));
        }
        let t = impact_metrics(&rows, &crit(&["sex"])).unwrap();
        let sex = t.table("sex").unwrap();
        assert_eq!(sex.cell("F").unwrap().selection.as_ref().unwrap().impact_ratio, Some(1.0));
        assert_eq!(sex.cell("M").unwrap().selection.as_ref().unwrap().impact_ratio, Some(0.5));
    }

    #[test]
    fn single_category_is_the_unit_singleton() {
        let rows = vec![row(&[("sex", "F")], Some(true), None), row(&[("sex", "F")], Some(false), None)];
        let t = impact_metrics(&rows, &crit(&["sex"])).unwrap();
        assert_eq!(t.tables[0].cells.len(), 1);
        assert_eq!(t.tables[0].cells[0].selection.as_ref().unwrap().impact_ratio, Some(1.0));
    }

    #[test]
    fn hand_computed_scores_and_empty_intersections() {
        // pooled scores: 0.1 0.2 0.4 0.6 0.8 0.9 -> median 0.5
        let rows = vec![
            row(&[("r", "A"), ("s", "F")], Some(true), Some(0.9)),
            row(&[("r", "A"), ("s", "F")], Some(false), Some(0.4)),
            row(&[("r", "A"), ("s", "M")], Some(true), Some(0.8)),
            row(&[("r", "B"), ("s", "M")], Some(false), Some(0.1)),
            row(&[("r", "B"), ("s", "M")], Some(true), Some(0.6)),
            row(&[("r", "B"), ("s", "M")], Some(false), Some(0.2)),
        ];
        let t = impact_metrics(&rows, &crit(&["r", "s"])).unwrap();
        let r = t.table("r").unwrap();
        assert_eq!(r.pooled_median_score, Some(0.5));
        let a = r.cell("A").unwrap();
        assert_eq!(a.selection.as_ref().unwrap().rate, 2.0 / 3.0);
        assert_eq!(a.scoring.as_ref().unwrap().numerator, 2);
        assert_eq!(a.median_score, Some(0.8));
        let b = r.cell("B").unwrap();
        assert_eq!(b.selection.as_ref().unwrap().impact_ratio, Some((1.0 / 3.0) / (2.0 / 3.0)));
        assert_eq!(b.median_score, Some(0.2));
        let x = t.table("r|s").unwrap();
        let empty = x.cell("B|F").unwrap();
        assert_eq!(empty.status, "empty");
        assert!(empty.selection.is_none() && empty.median_score.is_none());
        assert_eq!(x.cells.len(), 4);
    }

    #[test]
    fn refusals() {
        assert_eq!(impact_metrics(&[], &crit(&["sex"])).unwrap_err(), CriterionError::NoRows);
        let rows = vec![row(&[("sex", "F")], Some(true), None)];
        assert!(matches!(impact_metrics(&rows, &crit(&["race"])), Err(CriterionError::MissingAxis { .. })));
        let none = vec![row(&[("sex", "F")], None, None)];
        assert!(matches!(impact_metrics(&none, &crit(&["sex"])), Err(CriterionError::MissingOutcome { row: 0 })));
    }

    #[test]
    fn csv_has_the_documented_header() {
        let rows = vec![row(&[("sex", "F")], Some(true), None)];
        let csv = impact_metrics(&rows, &crit(&["sex"])).unwrap().to_csv();
        assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(csv.lines().nth(1).unwrap(), "sex,F,1,1,1,1,1,,,,,,ok");
    }

    #[test]
    fn median_convention() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    proptest! {
        #[test]
        fn positive_ratios_lie_in_unit_interval(flags in prop::collection::vec((0usize..4, prop::bool::ANY), 1..60)) {
            let rows: Vec<ImpactRow> = flags
                .iter()
                .map(|(c, s)| ImpactRow {
                    categories: BTreeMap::from([("c".to_string(), format!("k{c}"))]),
                    selected: Some(*s),
                    score: None,
                })
                .collect();
            let t = impact_metrics(&rows, &crit(&["c"])).unwrap();
            let ratios: Vec<f64> = t.tables[0].cells.iter().filter_map(|c| c.selection.as_ref()?.impact_ratio).collect();
            if flags.iter().any(|(_, s)| *s) {
                prop_assert!(ratios.contains(&1.0));
                for r in ratios.iter().filter(|&&r| r > 0.0) {
                    prop_assert!(*r <= 1.0);
                }
            } else {
                prop_assert!(ratios.is_empty());
            }
        }
    }
}

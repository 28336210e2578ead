//! NYC Local Law 144 bias audits: historical data ingestion, the
//! imputed-demographics exclusion, per-category impact metrics with
//! statistical tests, disclosed test-data generation, and the public summary.
//!
//! Records whose demographics are imputed, inferred, of unknown source, or
//! UNKNOWN on either axis are excluded from every demographic table. They
//! still count towards the totals in the provenance section.

mod ingest;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use ingest::{ingest, IngestReport, QuarantinedRow, COLUMNS, UNSPECIFIED_CATEGORY};
pub use report::render_markdown;

use crate::blackbox::{BlackBoxModel, OutputSpace, Value};
use crate::criteria::{impact_metrics, CriterionError, ImpactMetrics, ImpactRow, MetricTable, ParityCounts, RateStat, StatisticalParity};
use crate::evidence::{collect, DistributionSpec, Evidence, EvidenceError, QueryBudget, SamplingStrategy};
use crate::seed::{derive, stream};
use crate::testing::{
    adjust_multiplicity, bootstrap_ci, run_parity_audit, selection_rate, AuditResult, AuditSpec, Decision,
    ModelAssumptions, Multiplicity, Presumption, Source, TestError, TestMethod,
};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const RACE: &str = "race_ethnicity";
pub const SEX: &str = "sex";
pub const INTERSECTION: &str = "race_ethnicity|sex";
pub const INSUFFICIENT: &str = "insufficient data";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemographicsSource {
    SelfReported,
    Imputed,
    Inferred,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalRecord {
    pub applicant_id: String,
    pub job_category: String,
    /// `None` for UNKNOWN.
    pub race_ethnicity: Option<String>,
    /// `None` for UNKNOWN.
    pub sex: Option<String>,
    pub demographics_source: DemographicsSource,
    pub selected: Option<bool>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub applicant_id: String,
    pub job_category: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Ll144Error {
    #[error("missing mandatory columns: {}", columns.join(", "))]
    MissingColumns { columns: Vec<String> },
    #[error("csv: {0}")]
    Csv(String),
    #[error("no usable records")]
    NoUsableRecords,
    #[error("historical data sufficient: test data is only generated when a demographic cell is below the minimum")]
    HistoricalSufficient,
    #[error("model unavailable: test data cannot be generated without querying the audited tool")]
    ModelUnavailable,
    #[error("invalid LL144 configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Test(#[from] TestError),
    #[error(transparent)]
    Criterion(#[from] CriterionError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
}

/// Split records into those usable for demographic analysis and a ledger of
/// the rest. Every record lands in exactly one of the two.
pub fn apply_exclusions(records: &[HistoricalRecord]) -> (Vec<HistoricalRecord>, Vec<Exclusion>) {
    let mut usable = Vec::new();
    let mut ledger = Vec::new();
    for r in records {
        let mut reasons = Vec::new();
        match r.demographics_source {
            DemographicsSource::SelfReported => {}
            DemographicsSource::Imputed => reasons.push("demographics imputed"),
            DemographicsSource::Inferred => reasons.push("demographics inferred"),
            DemographicsSource::Unknown => reasons.push("demographics source unknown"),
        }
        if r.race_ethnicity.is_none() {
            reasons.push("race/ethnicity UNKNOWN");
        }
        if r.sex.is_none() {
            reasons.push("sex UNKNOWN");
        }
        if reasons.is_empty() {
            usable.push(r.clone());
        } else {
            ledger.push(Exclusion {
                applicant_id: r.applicant_id.clone(),
                job_category: r.job_category.clone(),
                reason: reasons.join("; "),
            });
        }
    }
    (usable, ledger)
}

fn default_min_cell() -> usize {
    30
}
fn default_resamples() -> usize {
    2000
}
fn default_multiplicity() -> Multiplicity {
    Multiplicity::Bonferroni
}
fn default_test_label() -> String {
    "all (test data)".into()
}

/// Demographics of the applicants a model group label stands for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellDemographics {
    pub race_ethnicity: String,
    pub sex: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestDataConfig {
    pub n: usize,
    pub seed: u64,
    /// Model group label -> demographic cell. One stratum per entry.
    pub cells: BTreeMap<String, CellDemographics>,
    /// Law of the non-demographic features of synthetic applicants.
    #[serde(default)]
    pub base: DistributionSpec,
    #[serde(default = "default_test_label")]
    pub job_category: String,
}

/// Audit settings. Threshold, presumption, significance and method have no
/// defaults: the law names no statistical standard, so the auditor must.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ll144Config {
    pub audit_date: String,
    /// Identity of the tool or pipeline the historical data came from.
    pub audited_object: String,
    /// Largest tolerated gap between a category's rate and the reference rate.
    pub threshold: f64,
    pub presumption: Presumption,
    pub significance: f64,
    pub method: TestMethod,
    #[serde(default = "default_multiplicity")]
    pub multiplicity: Multiplicity,
    #[serde(default = "default_min_cell")]
    pub min_cell_count: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub race_levels: Option<Vec<String>>,
    #[serde(default)]
    pub sex_levels: Option<Vec<String>>,
    #[serde(default)]
    pub allow_test_data: bool,
    #[serde(default)]
    pub test_data: Option<TestDataConfig>,
}

impl Ll144Config {
    pub fn validate(&self) -> Result<(), Ll144Error> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Ll144Error::Invalid(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        if self.min_cell_count == 0 {
            return Err(Ll144Error::Invalid("min_cell_count must be positive".into()));
        }
        if self.allow_test_data && self.test_data.is_none() {
            return Err(Ll144Error::Invalid("allow_test_data requires a [test_data] section".into()));
        }
        self.audit_spec("A", "B").validate()?;
        Ok(())
    }

    fn metrics(&self) -> ImpactMetrics {
        let mut levels = BTreeMap::new();
        if let Some(l) = &self.race_levels {
            levels.insert(RACE.to_string(), l.clone());
        }
        if let Some(l) = &self.sex_levels {
            levels.insert(SEX.to_string(), l.clone());
        }
        ImpactMetrics { axes: vec![RACE.into(), SEX.into()], levels, intersections: true }
    }

    fn audit_spec(&self, reference: &str, category: &str) -> AuditSpec {
        AuditSpec {
            criterion: crate::criteria::ComplianceCriterion::StatisticalParity(StatisticalParity {
                group_a: reference.to_string(),
                group_b: category.to_string(),
                threshold: self.threshold,
            }),
            presumption: self.presumption,
            significance: self.significance,
            method: self.method,
            assumptions: ModelAssumptions {
                distribution: DistributionSpec::default(),
                family: "applicant outcomes; selections independent across applicants".into(),
                tags: vec!["ll144".into()],
            },
            bootstrap_resamples: self.bootstrap_resamples,
            seed: self.seed,
            planning_gap: None,
            target_power: 0.8,
        }
    }
}

fn rows_of(records: &[&HistoricalRecord]) -> Vec<ImpactRow> {
    records
        .iter()
        .map(|r| ImpactRow {
            categories: BTreeMap::from([
                (RACE.to_string(), r.race_ethnicity.clone().expect("usable records carry demographics")),
                (SEX.to_string(), r.sex.clone().expect("usable records carry demographics")),
            ]),
            selected: r.selected,
            score: r.score,
        })
        .collect()
}

fn by_category(usable: &[HistoricalRecord]) -> BTreeMap<&str, Vec<&HistoricalRecord>> {
    let mut m: BTreeMap<&str, Vec<&HistoricalRecord>> = BTreeMap::new();
    for r in usable {
        m.entry(r.job_category.as_str()).or_default().push(r);
    }
    m
}

/// Whether usable historical data meets the per-cell minimum everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sufficiency {
    pub sufficient: bool,
    /// `job category: table/cell (count)` for each short cell.
    pub short_cells: Vec<String>,
}

pub fn assess_sufficiency(usable: &[HistoricalRecord], config: &Ll144Config) -> Result<Sufficiency, Ll144Error> {
    let mut short = Vec::new();
    if usable.is_empty() {
        short.push("no usable historical records".to_string());
    }
    for (job, recs) in by_category(usable) {
        let table = impact_metrics(&rows_of(&recs), &config.metrics())?;
        for t in &table.tables {
            for c in t.cells.iter().filter(|c| c.count < config.min_cell_count) {
                short.push(format!("{job}: {}/{} ({})", t.axis, c.category, c.count));
            }
        }
    }
    Ok(Sufficiency { sufficient: short.is_empty(), short_cells: short })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDataDisclosure {
    pub method: String,
    pub model_identity: String,
    pub seed: u64,
    pub n: usize,
    pub per_cell: BTreeMap<String, usize>,
    pub trigger: Vec<String>,
}

/// Query the audited model on stratified synthetic applicants covering every
/// configured demographic cell.
pub fn generate_test_data(
    model: Option<&dyn BlackBoxModel>,
    config: &TestDataConfig,
    sufficiency: &Sufficiency,
) -> Result<(Evidence, TestDataDisclosure), Ll144Error> {
    if sufficiency.sufficient {
        return Err(Ll144Error::HistoricalSufficient);
    }
    let model = model.ok_or(Ll144Error::ModelUnavailable)?;
    if config.cells.is_empty() {
        return Err(Ll144Error::Invalid("test_data.cells is empty".into()));
    }
    let k = config.cells.len();
    let quotas: BTreeMap<String, usize> = config
        .cells
        .keys()
        .enumerate()
        .map(|(i, g)| (g.clone(), config.n / k + usize::from(i < config.n % k)))
        .collect();
    let strategy = SamplingStrategy::Stratified { base: config.base.clone(), quotas: quotas.clone() };
    let evidence = collect(model, &strategy, config.n, &mut QueryBudget::unlimited(), config.seed)?;
    let disclosure = TestDataDisclosure {
        method: "stratified synthetic applicants, equal quota per demographic cell, queried through the audited model"
            .into(),
        model_identity: model.descriptor().identity.clone(),
        seed: config.seed,
        n: config.n,
        per_cell: quotas,
        trigger: sufficiency.short_cells.clone(),
    };
    Ok((evidence, disclosure))
}

fn rows_from_test_data(evidence: &Evidence, config: &TestDataConfig) -> Vec<ImpactRow> {
    let binary = matches!(evidence.provenance.model.output, OutputSpace::Binary);
    evidence
        .records
        .iter()
        .filter_map(|r| {
            let cell = config.cells.get(r.input.group.as_deref()?)?;
            let v = match &r.output.value {
                Value::Num(v) => *v,
                Value::Cat(_) => return None,
            };
            Some(ImpactRow {
                categories: BTreeMap::from([
                    (RACE.to_string(), cell.race_ethnicity.clone()),
                    (SEX.to_string(), cell.sex.clone()),
                ]),
                selected: binary.then_some(v == 1.0),
                score: (!binary).then_some(v),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub ingested: usize,
    pub quarantined: usize,
    pub excluded: usize,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataProvenance {
    pub totals: CategoryCounts,
    pub per_job_category: BTreeMap<String, CategoryCounts>,
    pub quarantine_reasons: BTreeMap<String, usize>,
    pub quarantined_rows: Vec<QuarantinedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTest {
    pub axis: String,
    pub category: String,
    pub reference: String,
    /// `selection` or `scoring`.
    pub rate: String,
    pub result: AuditResult,
    pub adjusted_p_value: Option<f64>,
    pub adjusted_decision: Option<Decision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateInterval {
    pub axis: String,
    pub category: String,
    pub rate: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobCategoryAudit {
    pub job_category: String,
    pub data: String,
    pub rows: usize,
    pub metrics: MetricTable,
    pub insufficient_cells: Vec<String>,
    pub tests: Vec<CategoryTest>,
    pub intervals: Vec<RateInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub threshold: f64,
    pub presumption: Presumption,
    pub null_hypothesis: String,
    pub significance: f64,
    pub method: TestMethod,
    pub multiplicity: Multiplicity,
    pub min_cell_count: usize,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    pub definitions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasAuditSummary {
    pub schema_version: u32,
    pub audit_date: String,
    pub audited_object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub settings: Settings,
    pub data_provenance: DataProvenance,
    pub exclusion_ledger: Vec<Exclusion>,
    pub exclusions_narrative: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_data: Option<TestDataDisclosure>,
    pub job_categories: Vec<JobCategoryAudit>,
    pub notes: Vec<String>,
}

impl BiasAuditSummary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

/// Everything the summary is built from.
pub struct BiasAuditInput<'a> {
    pub ingest: &'a IngestReport,
    /// All ingested (non-quarantined) records.
    pub records: &'a [HistoricalRecord],
    pub usable: &'a [HistoricalRecord],
    pub ledger: &'a [Exclusion],
    pub test_data: Option<(&'a Evidence, &'a TestDataDisclosure)>,
}

fn reference_of(cells: &[(String, RateStat, usize)]) -> Option<&(String, RateStat, usize)> {
    cells.iter().fold(None, |best: Option<&(String, RateStat, usize)>, c| match best {
        Some(b) if b.1.rate >= c.1.rate => Some(b),
        _ => Some(c),
    })
}

fn audit_rows(
    label: &str,
    data: &str,
    rows: Vec<ImpactRow>,
    config: &Ll144Config,
    seed: u64,
    source: &Source,
) -> Result<JobCategoryAudit, Ll144Error> {
    let mut metrics = impact_metrics(&rows, &config.metrics())?;
    let mut insufficient = Vec::new();
    let mut tests = Vec::new();
    let mut intervals = Vec::new();
    let mut cell_no = 0u64;
    for table in metrics.tables.iter_mut() {
        for c in table.cells.iter_mut().filter(|c| c.count < config.min_cell_count) {
            if c.count > 0 {
                c.status = INSUFFICIENT.to_string();
            }
            insufficient.push(format!("{}/{} ({})", table.axis, c.category, c.count));
        }
        let use_selection = table.cells.iter().any(|c| c.selection.is_some());
        let rate_name = if use_selection { "selection" } else { "scoring" };
        let eligible: Vec<(String, RateStat, usize)> = table
            .cells
            .iter()
            .filter(|c| c.status == "ok")
            .filter_map(|c| {
                let s = if use_selection { c.selection.clone() } else { c.scoring.clone() };
                s.map(|s| (c.category.clone(), s, c.count))
            })
            .collect();
        for (category, stat, _) in &eligible {
            let flags: Vec<bool> = (0..stat.denominator).map(|i| i < stat.numerator).collect();
            let ci = bootstrap_ci(&flags, selection_rate, config.bootstrap_resamples, config.significance, derive(seed, cell_no))?;
            cell_no += 1;
            intervals.push(RateInterval {
                axis: table.axis.clone(),
                category: category.clone(),
                rate: rate_name.into(),
                estimate: ci.estimate,
                lower: ci.lower,
                upper: ci.upper,
                level: ci.level,
                resamples: ci.resamples,
            });
        }
        let Some((reference, ref_stat, _)) = reference_of(&eligible).cloned() else { continue };
        for (category, stat, _) in eligible.iter().filter(|c| c.0 != reference) {
            let counts = ParityCounts::new(
                ref_stat.numerator as u64,
                ref_stat.denominator as u64,
                stat.numerator as u64,
                stat.denominator as u64,
            );
            let spec = config.audit_spec(&reference, category);
            let crit = match &spec.criterion {
                crate::criteria::ComplianceCriterion::StatisticalParity(c) => c.clone(),
                _ => unreachable!("audit_spec builds a parity criterion"),
            };
            let result = run_parity_audit(counts, &crit, &spec, source.clone())?;
            tests.push(CategoryTest {
                axis: table.axis.clone(),
                category: category.clone(),
                reference: reference.clone(),
                rate: rate_name.into(),
                result,
                adjusted_p_value: None,
                adjusted_decision: None,
            });
        }
    }
    let tested: Vec<(usize, f64)> = tests
        .iter()
        .enumerate()
        .filter_map(|(i, t)| Some((i, t.result.outcome()?.p_value?)))
        .collect();
    if !tested.is_empty() {
        let ps: Vec<f64> = tested.iter().map(|t| t.1).collect();
        let adj = adjust_multiplicity(&ps, config.multiplicity, config.significance)?;
        for ((i, _), (q, r)) in tested.iter().zip(adj.adjusted.iter().zip(&adj.reject)) {
            tests[*i].adjusted_p_value = Some(*q);
            tests[*i].adjusted_decision = Some(if *r { Decision::RejectNull } else { Decision::FailToReject });
        }
    }
    Ok(JobCategoryAudit {
        job_category: label.to_string(),
        data: data.to_string(),
        rows: rows.len(),
        metrics,
        insufficient_cells: insufficient,
        tests,
        intervals,
    })
}

fn narrative(ledger: &[Exclusion]) -> String {
    if ledger.is_empty() {
        return "No records were excluded from the demographic analysis.".into();
    }
    let mut by_reason: BTreeMap<&str, usize> = BTreeMap::new();
    for e in ledger {
        *by_reason.entry(e.reason.as_str()).or_default() += 1;
    }
    let parts: Vec<String> = by_reason.iter().map(|(r, n)| format!("{n} ({r})")).collect();
    format!(
        "{} records were excluded from every demographic table because their demographic data was not \
         self-reported or was UNKNOWN: {}. Imputed and inferred demographics are never used. Excluded \
         records remain in the totals.",
        ledger.len(),
        parts.join(", ")
    )
}

/// Assemble the public summary: metrics, tests and intervals per job
/// category (plus the test-data section, if any) and the full provenance.
pub fn run_bias_audit(input: &BiasAuditInput<'_>, config: &Ll144Config) -> Result<BiasAuditSummary, Ll144Error> {
    config.validate()?;
    if input.usable.is_empty() && input.test_data.is_none() {
        return Err(Ll144Error::NoUsableRecords);
    }
    let mut per_job: BTreeMap<String, CategoryCounts> = BTreeMap::new();
    for r in input.records {
        per_job.entry(r.job_category.clone()).or_default().ingested += 1;
    }
    for q in &input.ingest.quarantined {
        let c = per_job.entry(q.job_category.clone()).or_default();
        c.ingested += 1;
        c.quarantined += 1;
    }
    for e in input.ledger {
        per_job.entry(e.job_category.clone()).or_default().excluded += 1;
    }
    for r in input.usable {
        per_job.entry(r.job_category.clone()).or_default().used += 1;
    }
    let totals = per_job.values().fold(CategoryCounts::default(), |mut t, c| {
        t.ingested += c.ingested;
        t.quarantined += c.quarantined;
        t.excluded += c.excluded;
        t.used += c.used;
        t
    });

    let historical = Source {
        model_identity: config.audited_object.clone(),
        strategy: "historical".into(),
        replayable: true,
        anomalies: 0,
        exclusions: if input.ledger.is_empty() { Vec::new() } else { vec![narrative(input.ledger)] },
        truncation: None,
    };
    let base = derive(config.seed, stream::BOOTSTRAP);
    let mut jobs = Vec::new();
    for (i, (job, recs)) in by_category(input.usable).into_iter().enumerate() {
        jobs.push(audit_rows(job, "historical", rows_of(&recs), config, derive(base, i as u64), &historical)?);
    }
    let mut test_section = None;
    if let (Some((evidence, disclosure)), Some(tc)) = (input.test_data, &config.test_data) {
        let source = Source::from_evidence(evidence);
        let rows = rows_from_test_data(evidence, tc);
        jobs.push(audit_rows(&tc.job_category, "test data", rows, config, derive(base, u64::MAX), &source)?);
        test_section = Some(disclosure.clone());
    }

    let mut notes = vec![
        "Reports metrics and test outcomes only; no legal determination of compliance is made.".to_string(),
        format!(
            "Each test compares a category with the highest-rate category of its table; {} correction is applied across the tests of a job category.",
            match config.multiplicity {
                Multiplicity::Bonferroni => "Bonferroni",
                Multiplicity::BenjaminiHochberg => "Benjamini-Hochberg",
            }
        ),
        format!("{}; failing to reject never confirms the presumption.", config.presumption.null_hypothesis()),
    ];
    if jobs.iter().any(|j| !j.insufficient_cells.is_empty()) {
        notes.push(format!(
            "Cells with fewer than {} records are marked \"{INSUFFICIENT}\" and are not tested.",
            config.min_cell_count
        ));
    }
    Ok(BiasAuditSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        audit_date: config.audit_date.clone(),
        audited_object: config.audited_object.clone(),
        config_hash: None,
        settings: Settings {
            threshold: config.threshold,
            presumption: config.presumption,
            null_hypothesis: config.presumption.null_hypothesis().into(),
            significance: config.significance,
            method: config.method,
            multiplicity: config.multiplicity,
            min_cell_count: config.min_cell_count,
            bootstrap_resamples: config.bootstrap_resamples,
            seed: config.seed,
            definitions: vec![
                "selection rate = selected / applicants with a selection outcome".into(),
                "scoring rate = share of scored applicants strictly above the median score of the job category".into(),
                "impact ratio = category rate / highest category rate in the same table".into(),
                "median of an even count = mean of the two central values".into(),
            ],
        },
        data_provenance: DataProvenance {
            totals,
            per_job_category: per_job,
            quarantine_reasons: input.ingest.reasons.clone(),
            quarantined_rows: input.ingest.quarantined.clone(),
        },
        exclusion_ledger: input.ledger.to_vec(),
        exclusions_narrative: narrative(input.ledger),
        test_data: test_section,
        job_categories: jobs,
        notes,
    })
}

//! Historical CSV ingestion with row-level quarantine.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{DemographicsSource, HistoricalRecord, Ll144Error};

pub const COLUMNS: [&str; 7] =
    ["applicant_id", "job_category", "race_ethnicity", "sex", "demographics_source", "selected", "score"];

/// Job category recorded for quarantined rows that lack one.
pub const UNSPECIFIED_CATEGORY: &str = "(unspecified)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantinedRow {
    /// Line number in the file; the header is line 1.
    pub line: u64,
    pub applicant_id: Option<String>,
    pub job_category: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub accepted: usize,
    pub quarantined: Vec<QuarantinedRow>,
    /// Quarantined rows per reason.
    pub reasons: BTreeMap<String, usize>,
}

fn unknown(v: &str) -> Option<String> {
    (!v.is_empty() && !v.eq_ignore_ascii_case("unknown")).then(|| v.to_string())
}

fn field<'a>(row: &'a csv::StringRecord, index: &BTreeMap<&str, usize>, c: &str) -> &'a str {
    row.get(index[c]).unwrap_or("")
}

fn parse_row(row: &csv::StringRecord, index: &BTreeMap<&str, usize>) -> Result<HistoricalRecord, &'static str> {
    let get = |c: &str| field(row, index, c);
    let id = get("applicant_id");
    if id.is_empty() {
        return Err("missing applicant_id");
    }
    let job = get("job_category");
    if job.is_empty() {
        return Err("missing job_category");
    }
    let source = match get("demographics_source").to_ascii_lowercase().as_str() {
        "self-reported" | "self_reported" => DemographicsSource::SelfReported,
        "imputed" => DemographicsSource::Imputed,
        "inferred" => DemographicsSource::Inferred,
        "unknown" => DemographicsSource::Unknown,
        _ => return Err("invalid demographics_source"),
    };
    let selected = match get("selected") {
        "" => None,
        "0" => Some(false),
        "1" => Some(true),
        _ => return Err("invalid selected value"),
    };
    let score = match get("score") {
        "" => None,
        s => {
            let v: f64 = s.parse().map_err(|_| "score not a number")?;
            if !(0.0..=1.0).contains(&v) {
                return Err("score out of range");
            }
            Some(v)
        }
    };
    if selected.is_none() && score.is_none() {
        return Err("no outcome");
    }
    Ok(HistoricalRecord {
        applicant_id: id.to_string(),
        job_category: job.to_string(),
        race_ethnicity: unknown(get("race_ethnicity")),
        sex: unknown(get("sex")),
        demographics_source: source,
        selected,
        score,
    })
}

/// Parse the historical CSV. Malformed rows are quarantined, never dropped
/// silently; a header missing mandatory columns is refused outright.
pub fn ingest<R: Read>(input: R) -> Result<(Vec<HistoricalRecord>, IngestReport), Ll144Error> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().map_err(|e| Ll144Error::Csv(e.to_string()))?.clone();
    let missing: Vec<String> =
        COLUMNS.iter().filter(|c| !header.iter().any(|h| h == **c)).map(|c| c.to_string()).collect();
    if !missing.is_empty() {
        return Err(Ll144Error::MissingColumns { columns: missing });
    }
    let index: BTreeMap<&str, usize> =
        COLUMNS.iter().map(|c| (*c, header.iter().position(|h| h == *c).expect("checked above"))).collect();

    let mut records = Vec::new();
    let mut report = IngestReport::default();
    let mut seen = BTreeSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| Ll144Error::Csv(e.to_string()))?;
        report.rows += 1;
        let line = row.position().map_or(0, |p| p.line());
        let get = |c: &str| field(&row, &index, c);
        let parsed = if row.len() != header.len() {
            Err("wrong field count")
        } else {
            parse_row(&row, &index).and_then(|r| if seen.insert(r.applicant_id.clone()) { Ok(r) } else { Err("duplicate applicant_id") })
        };
        match parsed {
            Ok(r) => records.push(r),
            Err(reason) => {
                let id = get("applicant_id");
                let job = get("job_category");
                report.quarantined.push(QuarantinedRow {
                    line,
                    applicant_id: (!id.is_empty()).then(|| id.to_string()),
                    job_category: if job.is_empty() { UNSPECIFIED_CATEGORY.to_string() } else { job.to_string() },
                    reason: reason.to_string(),
                });
                *report.reasons.entry(reason.to_string()).or_default() += 1;
            }
        }
    }
    report.accepted = records.len();
    Ok((records, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "applicant_id,job_category,race_ethnicity,sex,demographics_source,selected,score\n";

    #[test]
    fn header_only_gives_nothing() {
        let (recs, report) = ingest(HEADER.as_bytes()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(report, IngestReport::default());
    }

    #[test]
    fn score_out_of_range_is_quarantined() {
        let csv = format!("{HEADER}a1,eng,Asian,Female,self-reported,,1.2\n");
        let (recs, report) = ingest(csv.as_bytes()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(report.quarantined[0].reason, "score out of range");
        assert_eq!(report.quarantined[0].line, 2);
        assert_eq!(report.reasons["score out of range"], 1);
    }

    #[test]
    fn missing_columns_are_named() {
        let err = ingest("applicant_id,job_category,race_ethnicity,sex,selected\n".as_bytes()).unwrap_err();
        assert_eq!(err, Ll144Error::MissingColumns { columns: vec!["demographics_source".into(), "score".into()] });
    }

    #[test]
    fn each_reason_is_detected() {
        let csv = format!(
            "{HEADER}\
             a,eng,Asian,Female,self-reported,1,\n\
             a,eng,Asian,Female,self-reported,1,\n\
             ,eng,Asian,Female,self-reported,1,\n\
             c,,Asian,Female,self-reported,1,\n\
             d,eng,Asian,Female,guessed,1,\n\
             e,eng,Asian,Female,self-reported,yes,\n\
             f,eng,Asian,Female,self-reported,,high\n\
             g,eng,Asian,Female,self-reported,,\n\
             h,eng,Asian\n\
             i,eng,UNKNOWN,,imputed,0,0.5\n"
        );
        let (recs, report) = ingest(csv.as_bytes()).unwrap();
        let reasons: Vec<&str> = report.quarantined.iter().map(|q| q.reason.as_str()).collect();
        assert_eq!(
            reasons,
            [
                "duplicate applicant_id",
                "missing applicant_id",
                "missing job_category",
                "invalid demographics_source",
                "invalid selected value",
                "score not a number",
                "no outcome",
                "wrong field count"
            ]
        );
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].race_ethnicity, None);
        assert_eq!(recs[1].sex, None);
        assert_eq!(report.quarantined[2].job_category, UNSPECIFIED_CATEGORY);
        assert_eq!(report.rows, 10);
    }
}

//! Line-delimited JSON evidence files.
//!
//! Line 1 is a header `{"schema_version": 1, "n": N, "provenance": {...}}`;
//! each following line is one [`QueryRecord`](super::QueryRecord).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Evidence, EvidenceError, Provenance, QueryRecord};

pub const EVIDENCE_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    n: usize,
    provenance: Provenance,
}

pub fn write_jsonl<W: Write>(evidence: &Evidence, mut out: W) -> std::io::Result<()> {
    let header = Header {
        schema_version: EVIDENCE_SCHEMA_VERSION,
        n: evidence.n(),
        provenance: evidence.provenance.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in &evidence.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Evidence, EvidenceError> {
    let mut lines = input.lines();
    let fmt = |e: &dyn std::fmt::Display| EvidenceError::Format(e.to_string());
    let first = lines.next().ok_or_else(|| EvidenceError::Format("missing header line".into()))?;
    let header: Header = serde_json::from_str(&first.map_err(|e| fmt(&e))?).map_err(|e| fmt(&e))?;
    if header.schema_version != EVIDENCE_SCHEMA_VERSION {
        return Err(EvidenceError::Format(format!(
            "unsupported schema_version {} (expected {EVIDENCE_SCHEMA_VERSION})",
            header.schema_version
        )));
    }
    let mut records = Vec::with_capacity(header.n);
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| fmt(&e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: QueryRecord =
            serde_json::from_str(&line).map_err(|e| EvidenceError::Format(format!("line {}: {e}", lineno + 2)))?;
        records.push(r);
    }
    if records.len() != header.n {
        return Err(EvidenceError::Format(format!("header says n = {}, found {} records", header.n, records.len())));
    }
    let evidence = Evidence { records, provenance: header.provenance };
    evidence.check()?;
    Ok(evidence)
}

//! The `bbaudit` command-line front end.
//!
//! Exit codes: 0 when the command completed (whatever the audit decided), 1
//! when the audit was refused for lack of usable evidence, 2 for
//! configuration, data-schema and transport errors. The decision itself only
//! ever appears in the report.

mod config;
mod render;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{ModelSource, PowerConfig, RunConfig, SamplingPlan, SimulateConfig, Ll144File, DEFAULT_TOKEN_ENV};

use crate::blackbox::BlackBoxModel;
use crate::evidence::{collect, write_jsonl, QueryBudget};
use crate::ll144::{
    apply_exclusions, assess_sufficiency, generate_test_data, ingest, render_markdown, run_bias_audit, BiasAuditInput,
    Ll144Error,
};
use crate::testing::{estimate_operating_characteristics, run_audit, AuditResult, TestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Markdown,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "bbaudit", version, about = "Black-box model audits as hypothesis tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the seed given in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for report files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Rendering printed on standard output. Report files are always written.
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    /// Treat data warnings (quarantined rows, anomalies, truncated or
    /// non-replayable evidence) as errors.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Worker threads for the parallel stages (results do not depend on it).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect evidence from a model, estimate the criterion and test it.
    Run,
    /// Monte Carlo false and true positive rates over a grid of zoo models.
    Power,
    /// NYC Local Law 144 bias audit of historical selection data.
    Ll144 {
        /// Historical CSV; overrides `data` in the configuration.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Calibration suite over the synthetic zoo.
    Simulate,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("refused: {0}")]
    Refused(String),
    #[error("{0}")]
    Failed(String),
    #[error("strict mode: {0}")]
    Strict(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Refused(_) => 1,
            _ => 2,
        }
    }
}

impl From<TestError> for CliError {
    fn from(e: TestError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<Ll144Error> for CliError {
    fn from(e: Ll144Error) -> Self {
        match e {
            Ll144Error::NoUsableRecords => CliError::Refused(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// sha256 of the configuration file exactly as read.
pub fn config_hash(raw: &[u8]) -> String {
    hex(&Sha256::digest(raw))
}

/// Write `contents` to `dir/name` via a temporary file and a rename, so a
/// reader never sees a half-written report.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(contents).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    fs::rename(&tmp, &target).map_err(io(&target))?;
    Ok(target)
}

fn read_config(cli: &Cli) -> Result<(PathBuf, Vec<u8>), CliError> {
    let path = cli.config.clone().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let raw = fs::read(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok((path, raw))
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path, raw: &[u8]) -> Result<T, CliError> {
    let text = std::str::from_utf8(raw).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

/// What a command wrote and what it prints.
struct Emitted {
    stdout: String,
    code: i32,
}

fn emit(cli: &Cli, files: &[(&str, String)], json: &str, markdown: &str, csv: &str) -> Result<String, CliError> {
    for (name, body) in files {
        write_atomic(&cli.out_dir, name, body.as_bytes())?;
    }
    Ok(match cli.format {
        Format::Json => json.to_string(),
        Format::Markdown => markdown.to_string(),
        Format::Csv => csv.to_string(),
    })
}

#[derive(Debug, Serialize)]
struct RunReport<'a> {
    schema_version: u32,
    command: &'static str,
    config_hash: String,
    seed: u64,
    evidence_records: usize,
    result: &'a AuditResult,
}

fn cmd_run(cli: &Cli) -> Result<Emitted, CliError> {
    let (path, raw) = read_config(cli)?;
    let mut cfg: RunConfig = parse(&path, &raw)?;
    if let Some(s) = cli.seed {
        cfg.audit.seed = s;
    }
    cfg.audit.validate()?;
    let model = cfg.model.build()?;
    let mut budget = match cfg.sampling.budget {
        Some(b) => QueryBudget::new(b).map_err(|e| CliError::Config(format!("sampling.budget: {e}")))?,
        None => QueryBudget::unlimited(),
    };
    let evidence = collect(model.as_ref(), &cfg.sampling.strategy, cfg.sampling.n, &mut budget, cfg.audit.seed)
        .map_err(|e| CliError::Failed(e.to_string()))?;
    if cli.strict {
        if let Some(t) = &evidence.provenance.truncation {
            return Err(CliError::Strict(t.reason.clone()));
        }
        if !evidence.provenance.anomalies.is_empty() {
            return Err(CliError::Strict(format!("{} anomalous responses", evidence.provenance.anomalies.len())));
        }
    }
    let result = run_audit(&evidence, &cfg.audit)?;
    let report = RunReport {
        schema_version: crate::testing::AUDIT_SCHEMA_VERSION,
        command: "run",
        config_hash: config_hash(&raw),
        seed: cfg.audit.seed,
        evidence_records: evidence.n(),
        result: &result,
    };
    let json = to_json(&report);
    let markdown = render::run_markdown(&result, &report.config_hash, report.seed);
    let csv = render::run_csv(&result);
    let mut log = Vec::new();
    write_jsonl(&evidence, &mut log).expect("writing to memory");
    let name = &cfg.output.name;
    let stdout = emit(
        cli,
        &[
            (&format!("{name}.json"), json.clone()),
            (&format!("{name}.md"), markdown.clone()),
            (&format!("{name}.evidence.jsonl"), String::from_utf8(log).expect("jsonl is utf-8")),
        ],
        &json,
        &markdown,
        &csv,
    )?;
    let code = match result {
        AuditResult::Completed(_) => 0,
        AuditResult::Refused(r) => {
            eprintln!("audit refused: {}", r.reason);
            1
        }
    };
    Ok(Emitted { stdout, code })
}

fn cmd_power(cli: &Cli) -> Result<Emitted, CliError> {
    let (path, raw) = read_config(cli)?;
    let mut cfg: PowerConfig = parse(&path, &raw)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let grid = cfg.grid()?;
    cfg.audit.validate()?;
    let mut rows = Vec::new();
    for (i, spec) in grid.iter().enumerate() {
        let est = estimate_operating_characteristics(
            &cfg.audit,
            spec,
            cfg.n_per_group,
            cfg.trials,
            crate::seed::derive(cfg.seed, i as u64),
        )?;
        rows.push(render::PowerRow { point: i, model: spec.clone(), estimate: est });
    }
    let table = render::PowerTable {
        schema_version: 1,
        command: "power",
        config_hash: config_hash(&raw),
        seed: cfg.seed,
        n_per_group: cfg.n_per_group,
        audit: cfg.audit.clone(),
        rows,
    };
    let json = to_json(&table);
    let csv = render::power_csv(&table.rows);
    let markdown = render::power_markdown(&table);
    let stdout = emit(cli, &[("power.json", json.clone()), ("power.csv", csv.clone())], &json, &markdown, &csv)?;
    Ok(Emitted { stdout, code: 0 })
}

fn cmd_simulate(cli: &Cli) -> Result<Emitted, CliError> {
    let (cfg, hash) = match &cli.config {
        Some(_) => {
            let (path, raw) = read_config(cli)?;
            (parse::<SimulateConfig>(&path, &raw)?, Some(config_hash(&raw)))
        }
        None => (SimulateConfig::default(), None),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    let report = render::simulate(&cfg, seed, hash)?;
    let json = to_json(&report);
    let csv = render::simulate_csv(&report);
    let markdown = render::simulate_markdown(&report);
    let stdout = emit(cli, &[("simulate.json", json.clone()), ("simulate.csv", csv.clone())], &json, &markdown, &csv)?;
    Ok(Emitted { stdout, code: 0 })
}

fn cmd_ll144(cli: &Cli, data: Option<&Path>) -> Result<Emitted, CliError> {
    let (path, raw) = read_config(cli)?;
    let mut file: Ll144File = parse(&path, &raw)?;
    if let Some(s) = cli.seed {
        file.audit.seed = s;
    }
    file.audit.validate()?;
    let data = match (data, &file.data) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => path.parent().unwrap_or(Path::new(".")).join(d),
        (None, None) => return Err(CliError::Config("no data file: pass --data or set `data`".into())),
    };
    let reader = fs::File::open(&data).map_err(|source| CliError::Io { path: data.clone(), source })?;
    let (records, report) = ingest(reader).map_err(|e| CliError::Failed(format!("{}: {e}", data.display())))?;
    if cli.strict && !report.quarantined.is_empty() {
        let q = &report.quarantined[0];
        return Err(CliError::Strict(format!(
            "{} rows quarantined (first: line {}, {})",
            report.quarantined.len(),
            q.line,
            q.reason
        )));
    }
    let (usable, ledger) = apply_exclusions(&records);
    let mut notes = Vec::new();
    let model: Option<Box<dyn BlackBoxModel>> = match &file.model {
        Some(m) => Some(m.build()?),
        None => None,
    };
    let mut test_data = None;
    if file.audit.allow_test_data {
        let sufficiency = assess_sufficiency(&usable, &file.audit)?;
        let tc = file.audit.test_data.as_ref().expect("validated: allow_test_data needs test_data");
        match generate_test_data(model.as_deref(), tc, &sufficiency) {
            Ok(t) => test_data = Some(t),
            Err(Ll144Error::HistoricalSufficient) => {}
            Err(Ll144Error::ModelUnavailable) => notes.push(
                "Test data was needed for cells below the minimum count but no model was configured; those \
                 cells are reported as insufficient data."
                    .to_string(),
            ),
            Err(e) => return Err(e.into()),
        }
    }
    let input = BiasAuditInput {
        ingest: &report,
        records: &records,
        usable: &usable,
        ledger: &ledger,
        test_data: test_data.as_ref().map(|(e, d)| (e, d)),
    };
    let mut summary = run_bias_audit(&input, &file.audit)?;
    summary.config_hash = Some(config_hash(&raw));
    summary.notes.extend(notes);
    let json = summary.to_json();
    let markdown = render_markdown(&summary);
    let csv = render::ll144_csv(&summary);
    let stdout = emit(
        cli,
        &[("summary.json", json.clone()), ("summary.md", markdown.clone()), ("metrics.csv", csv.clone())],
        &json,
        &markdown,
        &csv,
    )?;
    Ok(Emitted { stdout, code: 0 })
}

fn dispatch(cli: &Cli) -> Result<Emitted, CliError> {
    match &cli.command {
        Command::Run => cmd_run(cli),
        Command::Power => cmd_power(cli),
        Command::Ll144 { data } => cmd_ll144(cli, data.as_deref()),
        Command::Simulate => cmd_simulate(cli),
    }
}

/// Run a parsed command line; returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let outcome = match cli.workers {
        Some(0) => Err(CliError::Config("--workers must be positive".into())),
        Some(w) => match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
            Ok(pool) => pool.install(|| dispatch(cli)),
            Err(e) => Err(CliError::Config(format!("--workers: {e}"))),
        },
        None => dispatch(cli),
    };
    match outcome {
        Ok(e) => {
            print!("{}", e.stdout);
            e.code
        }
        Err(e) => {
            eprintln!("bbaudit: {e}");
            e.exit_code()
        }
    }
}

/// Entry point for the binary.
pub fn main_from_args() -> i32 {
    execute(&Cli::parse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::make_synthetic;

    #[test]
    fn hash_is_sha256_hex() {
        assert_eq!(config_hash(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_atomic(dir.path(), "r.json", b"{}").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"{}");
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn refusals_exit_one_and_errors_two() {
        assert_eq!(CliError::from(Ll144Error::NoUsableRecords).exit_code(), 1);
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::from(TestError::Invalid("x".into())).exit_code(), 2);
    }

    #[test]
    fn zoo_models_build_from_config() {
        let m: ModelSource = toml::from_str(
            "[synthetic]\nthreshold = 0.1\n[synthetic.kind]\nkind = \"group_threshold\"\nrate_a = 0.5\nrate_b = 0.5\n",
        )
        .unwrap();
        assert!(m.build().is_ok());
        assert!(make_synthetic(m.synthetic.as_ref().unwrap()).unwrap().truth.compliant());
    }
}

//! Run reports: a canonical JSON document tying every result row to the
//! exact configuration that produced it.
//!
//! A [`ReportDocument`] is written once per toolkit run. Its `run_id` is a
//! digest of the command name and the full config echo, so readers can verify
//! that rows and config belong together, and identical configs yield
//! identical ids. Serialization is canonical (sorted keys, fixed layout):
//! rerunning a run with the same inputs reproduces the file byte for byte.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::attack::AttackRow;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

/// Version stamp embedded in every report.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Header of the merged plot-ready CSV produced by [`merge_to_csv`].
pub const MERGED_CSV_HEADER: &str =
    "run_id,source,name,attribute,capability,view,m,aggregator,weight_scheme,k,n,value,delta";

/// Seconds since the epoch, honoring `SOURCE_DATE_EPOCH` when set so that
/// reproducible runs can pin their timestamps.
pub fn effective_timestamp() -> u64 {
    if let Ok(raw) = std::env::var("SOURCE_DATE_EPOCH") {
        if let Ok(pinned) = raw.parse::<u64>() {
            return pinned;
        }
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Digest identifying a run: command name plus full config echo.
pub fn run_id(command: &str, config: &Value) -> String {
    let identity = serde_json::json!({ "command": command, "config": config });
    let canonical = identity.to_string();
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// One run's results: config echo, metric rows, attack rows, and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    /// Digest of `command` + `config`; see [`run_id`].
    pub run_id: String,
    /// Subcommand that produced this report.
    pub command: String,
    /// Full configuration echo, sufficient to reproduce the run.
    pub config: Value,
    /// Scalar evaluation results.
    pub metrics: Vec<MetricReport>,
    /// Attack sweep rows (the CSV schema's contents, kept structured).
    pub attack_rows: Vec<AttackRow>,
    /// Report creation time (seconds since epoch; `SOURCE_DATE_EPOCH` wins).
    pub created_unix: u64,
    pub toolkit_version: String,
}

impl ReportDocument {
    /// Start an empty report for `command` with its config echo.
    pub fn new(command: &str, config: Value) -> Self {
        ReportDocument {
            run_id: run_id(command, &config),
            command: command.to_string(),
            config,
            metrics: Vec::new(),
            attack_rows: Vec::new(),
            created_unix: effective_timestamp(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
        }
    }

    pub fn with_metrics(mut self, metrics: Vec<MetricReport>) -> Self {
        self.metrics = metrics;
        self
    }

    pub fn with_attack_rows(mut self, rows: Vec<AttackRow>) -> Self {
        self.attack_rows = rows;
        self
    }

    /// Canonical serialization: pretty JSON with recursively sorted keys and
    /// a trailing newline.
    pub fn canonical_json(&self) -> Result<String> {
        // Round-tripping through `Value` sorts every object's keys.
        let value = serde_json::to_value(self)?;
        Ok(format!("{}\n", serde_json::to_string_pretty(&value)?))
    }

    /// The attack rows rendered in the attack CSV schema.
    pub fn attack_csv(&self) -> String {
        crate::attack::attack_rows_to_csv(&self.attack_rows)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.canonical_json()?)?;
        Ok(())
    }

    /// Read a report and verify its rows are traceable to its config (the
    /// stored `run_id` must match a recomputation from the echo).
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let doc: ReportDocument = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        let expected = run_id(&doc.command, &doc.config);
        if doc.run_id != expected {
            return Err(Error::InvalidInput(format!(
                "{}: run_id '{}' does not match its config echo (expected '{expected}')",
                path.display(),
                doc.run_id
            )));
        }
        Ok(doc)
    }
}

fn csv_quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn metric_param<'a>(metric: &'a MetricReport, key: &str) -> Option<&'a Value> {
    metric.parameters.get(key)
}

fn param_string(value: Option<&Value>) -> String {
    match value {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(other) => other.to_string(),
        None => String::new(),
    }
}

/// Merge reports into one long-format CSV with one scalar per row.
///
/// Rows are sorted, so the output is invariant under reordering of the input
/// reports. Metric rows leave attack-only columns empty and vice versa.
pub fn merge_to_csv(reports: &[ReportDocument]) -> String {
    let mut lines: Vec<String> = Vec::new();
    for report in reports {
        for metric in &report.metrics {
            lines.push(format!(
                "{},metric,{},{},,,,,,{},{},{:.4},",
                report.run_id,
                csv_quote(&metric.metric_name),
                param_string(metric_param(metric, "attribute")),
                param_string(metric_param(metric, "k")),
                metric.n_evaluated,
                metric.value
            ));
        }
        for row in &report.attack_rows {
            lines.push(format!(
                "{},attack,accuracy,{},{},{},{},{},{},,{},{:.4},{:.4}",
                report.run_id,
                row.attribute,
                row.capability,
                row.view.as_str(),
                row.m,
                row.aggregator.as_str(),
                row.weight_scheme.as_str(),
                row.n,
                row.accuracy,
                row.delta
            ));
        }
    }
    lines.sort_unstable();
    let mut out = String::from(MERGED_CSV_HEADER);
    out.push('\n');
    for line in lines {
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Column count shared by the merged header and every emitted row.
pub fn merged_csv_columns() -> usize {
    MERGED_CSV_HEADER.split(',').count()
}

//! Ablation report files.

use std::path::{Path, PathBuf};

use ontoplace::grounding::AblationReport;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const RUNS_CSV: &str = "runs.csv";
pub const RUNS_JSON: &str = "runs.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";

fn csv_text<T: Serialize>(records: &[T]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)
            .map_err(|e| CliError::Runtime(format!("cannot format CSV: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Runtime(format!("cannot format CSV: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn json_text<T: Serialize + ?Sized>(value: &T) -> CliResult<String> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(format!("cannot format JSON: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Writes every file or none: contents go to hidden temporary files first
/// and are renamed into place only once all of them were written.
pub fn write_all_or_nothing(dir: &Path, files: &[(&str, String)]) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, text) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = std::fs::write(&tmp, text) {
            for (t, _) in &staged {
                let _ = std::fs::remove_file(t);
            }
            let _ = std::fs::remove_file(&tmp);
            return Err(CliError::Runtime(format!("{}: {e}", tmp.display())));
        }
        staged.push((tmp, dir.join(name)));
    }
    let mut written = Vec::with_capacity(staged.len());
    for (tmp, path) in staged {
        std::fs::rename(&tmp, &path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

/// Writes per-run rows and per-cell summaries as CSV and JSON into
/// `out_dir`, plus `extra` files (such as the resolved config). Reruns
/// overwrite with identical bytes.
pub fn emit_report(report: &AblationReport, out_dir: &Path, extra: &[(&str, String)]) -> CliResult<Vec<PathBuf>> {
    if report.cells.is_empty() || report.rows.is_empty() {
        return Err(CliError::Runtime("ablation produced no cells; nothing written".into()));
    }
    let mut files = vec![
        (RUNS_CSV, csv_text(&report.rows)?),
        (RUNS_JSON, json_text(&report.rows)?),
        (SUMMARY_CSV, csv_text(&report.cells)?),
        (SUMMARY_JSON, json_text(&report.cells)?),
    ];
    files.extend(extra.iter().cloned());
    write_all_or_nothing(out_dir, &files)
}

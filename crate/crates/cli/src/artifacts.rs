//! Run artifacts: atomic file writes and the machine-readable summary.
//!
//! Every artifact is written through [`write_atomic`] (write to a sibling
//! temp file, then rename), so a crash mid-write never leaves a truncated
//! file behind. The JSON summary contains no timing fields and serializes
//! maps with sorted keys, so repeated runs with the same configuration and
//! seed produce byte-identical output.

use std::fs;
use std::path::Path;

use nashflow::RunReport;
use serde_json::{json, Map, Value};

/// Write `bytes` to `path` via a temp-file-plus-rename in the same
/// directory, creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn float_list(values: &[f64]) -> Value {
    Value::Array(values.iter().map(|v| json!(v)).collect())
}

fn optional_float(value: Option<f64>) -> Value {
    value.map_or(Value::Null, |v| json!(v))
}

/// Build the `summary.json` document from the canonical config echo and the
/// run report. The echo's `key = value` lines become the `config` map.
pub fn summary_json(echo: &str, report: &RunReport) -> String {
    let mut config = Map::new();
    for line in echo.lines() {
        if let Some((key, value)) = line.split_once(" = ") {
            config.insert(key.to_string(), Value::String(value.to_string()));
        }
    }
    let last = report.records.last();
    let final_metrics = last.map_or(Value::Null, |rec| {
        json!({
            "dynamic": rec.objective.dynamic,
            "interaction": rec.objective.interaction,
            "terminal": rec.objective.terminal,
            "total": rec.objective.total,
            "residual": rec.residual,
            "fm_loss": optional_float(rec.fm_loss),
            "clf_loss": optional_float(rec.clf_loss),
        })
    });
    let doc = json!({
        "schema_version": 1,
        "library_version": nashflow::VERSION,
        "config": Value::Object(config),
        "epochs_completed": report.records.len(),
        "aborted": report.abort.clone().map_or(Value::Null, Value::String),
        "final": final_metrics,
        "terminal_mean": float_list(&report.terminal_mean),
        "terminal_var": float_list(&report.terminal_var),
        "mixture_masses": report
            .mixture_masses
            .as_deref()
            .map_or(Value::Null, float_list),
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("summary document serializes");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use nashflow::{EpochRecord, ObjectiveBreakdown};

    fn sample_report() -> RunReport {
        RunReport {
            records: vec![EpochRecord {
                epoch: 1,
                objective: ObjectiveBreakdown {
                    dynamic: 0.5,
                    interaction: 0.25,
                    terminal: 0.125,
                    total: 0.875,
                },
                residual: 0.0625,
                fm_loss: Some(1.5),
                clf_loss: None,
                wall_ms: 9341,
            }],
            terminal_mean: vec![0.0, -1.0],
            terminal_var: vec![0.01, 0.02],
            mixture_masses: None,
            abort: None,
        }
    }

    #[test]
    fn atomic_writes_create_parents_and_leave_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out/file.txt");
        write_atomic(&path, b"payload").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"payload");
        let entries: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(entries, ["file.txt"]);
    }

    #[test]
    fn summary_omits_timings_and_sorts_keys() {
        let text = summary_json("solver.epochs = 1\nsolver.beta = 0.01\n", &sample_report());
        assert!(!text.contains("wall_ms"), "timings leaked into {text}");
        assert!(text.contains("\"solver.beta\": \"0.01\""));
        let doc: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["schema_version"], 1);
        assert_eq!(doc["epochs_completed"], 1);
        assert_eq!(doc["final"]["total"], 0.875);
        assert_eq!(doc["final"]["clf_loss"], Value::Null);
        assert_eq!(doc["aborted"], Value::Null);
        // Key order inside objects is sorted, making the bytes reproducible.
        let rerendered = summary_json("solver.epochs = 1\nsolver.beta = 0.01\n", &sample_report());
        assert_eq!(text, rerendered);
    }

    #[test]
    fn aborted_runs_record_the_failure_reason() {
        let mut report = sample_report();
        report.abort = Some("epoch 2: boom".into());
        let doc: Value = serde_json::from_str(&summary_json("", &report)).unwrap();
        assert_eq!(doc["aborted"], "epoch 2: boom");
    }
}

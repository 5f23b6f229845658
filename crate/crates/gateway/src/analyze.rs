//! Session logs and datasets in, study report out.

use std::path::{Path, PathBuf};

use bloom_core::protocol::extract_measures;
use bloom_core::stats::{analyze_study, Dataset, StudyReport};
use bloom_core::SessionLog;
use serde::Serialize;

use crate::error::{GatewayError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub report: StudyReport,
    pub dataset: Dataset,
    pub included: Vec<PathBuf>,
    /// Inputs left out, with the reason.
    pub excluded: Vec<(PathBuf, String)>,
}

impl Analysis {
    pub fn diagnostics(&self) -> String {
        let mut s = format!("{} inputs used, {} excluded\n", self.included.len(), self.excluded.len());
        for (path, why) in &self.excluded {
            s.push_str(&format!("excluded {}: {why}\n", path.display()));
        }
        s
    }
}

/// Expands directories into their `.jsonl` and `.csv` files, sorted by name.
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| GatewayError::io(p, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && matches!(f.extension().and_then(|x| x.to_str()), Some("jsonl" | "csv")))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn load(path: &Path) -> std::result::Result<Dataset, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    if path.extension().and_then(|x| x.to_str()) == Some("csv") {
        return Dataset::from_csv_str(&text).map_err(|e| e.to_string());
    }
    let log = SessionLog::from_jsonl(&text).map_err(|e| e.to_string())?;
    let record = extract_measures(&log).map_err(|e| e.to_string())?;
    Dataset::from_records(&[record]).map_err(|e| e.to_string())
}

/// Reads every input, skips the unusable ones, and runs the battery.
pub fn analyze(paths: &[PathBuf], n_perm: usize, seed: u64) -> Result<Analysis> {
    let mut dataset = Dataset::new();
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for path in collect_inputs(paths)? {
        match load(&path).and_then(|d| dataset.merge(&d).map_err(|e| e.to_string())) {
            Ok(()) => included.push(path),
            Err(why) => {
                tracing::warn!(path = %path.display(), %why, "input excluded");
                excluded.push((path, why));
            }
        }
    }
    let report = analyze_study(&dataset, n_perm, seed);
    Ok(Analysis { report, dataset, included, excluded })
}

/// Writes `report.txt`, `report.csv`, `report.json`, `dataset.csv` and
/// `diagnostics.txt` into `out_dir`.
pub fn write_report(out_dir: &Path, analysis: &Analysis) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| GatewayError::io(out_dir, e))?;
    let json = serde_json::to_string_pretty(&analysis.report).expect("report serializes");
    let files = [
        ("report.txt", analysis.report.to_text()),
        ("report.csv", analysis.report.to_csv()),
        ("report.json", json),
        ("dataset.csv", analysis.dataset.to_csv()),
        ("diagnostics.txt", analysis.diagnostics()),
    ];
    files
        .into_iter()
        .map(|(name, body)| {
            let path = out_dir.join(name);
            std::fs::write(&path, body).map_err(|e| GatewayError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

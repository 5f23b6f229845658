//! Cell means and standard deviations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Factor, Measure};
use crate::protocol::{Attention, Feedback};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub attention: Option<Attention>,
    pub feedback: Option<Feedback>,
    pub time: Option<u8>,
    pub mean: Option<f64>,
    /// Sample standard deviation; absent below two values.
    pub sd: Option<f64>,
    pub n: usize,
}

impl CellSummary {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(a) = self.attention {
            parts.push(a.to_string());
        }
        if let Some(f) = self.feedback {
            parts.push(f.to_string());
        }
        if let Some(t) = self.time {
            parts.push(format!("t{t}"));
        }
        if parts.is_empty() {
            "all".into()
        } else {
            parts.join("/")
        }
    }
}

/// Mean and sample SD (n - 1 denominator).
pub fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(m), None);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(m), Some(var.sqrt()))
}

/// Summarises every observation of `measure`, grouped by the listed
/// factors. Cells with no values are omitted.
pub fn summarize(data: &Dataset, measure: Measure, grouping: &[Factor]) -> Vec<CellSummary> {
    type Key = (Option<Attention>, Option<Feedback>, Option<u8>);
    let mut cells: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    let times = data.times(measure);
    for (_, row) in data.participants() {
        for &t in &times {
            let Some(v) = row.value(measure, t) else { continue };
            let key = (
                grouping.contains(&Factor::Attention).then_some(row.attention),
                grouping.contains(&Factor::Feedback).then_some(row.feedback),
                grouping.contains(&Factor::Time).then_some(t),
            );
            cells.entry(key).or_default().push(v);
        }
    }
    cells
        .into_iter()
        .map(|((attention, feedback, time), values)| {
            let (mean, sd) = mean_sd(&values);
            CellSummary { attention, feedback, time, mean, sd, n: values.len() }
        })
        .collect()
}

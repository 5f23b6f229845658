//! Line formats for live and recorded IBI data.
//!
//! Live sensors send one JSON object per line, `{"t_ms":<integer>,"ibi_ms":<number>}`.
//! Recordings are CSV files with the header `t_ms,ibi_ms`.

use bloom_core::IbiSample;
use serde::Deserialize;

use crate::error::{GatewayError, Result};

/// Share of malformed lines above which a stream is abandoned.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;
/// The malformed share is only judged once this many lines have arrived.
pub const MIN_LINES_FOR_ABORT: usize = 10;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireSample {
    t_ms: u64,
    ibi_ms: f64,
}

/// Parses one wire line. Blank lines yield `Ok(None)`.
pub fn parse_wire_line(line: &str) -> Result<Option<IbiSample>, String> {
    let line = line.trim();
    if line.is_empty() {
        return Ok(None);
    }
    let w: WireSample = serde_json::from_str(line).map_err(|e| e.to_string())?;
    check(w.t_ms, w.ibi_ms).map(Some)
}

fn check(t_ms: u64, ibi_ms: f64) -> Result<IbiSample, String> {
    if !(ibi_ms.is_finite() && ibi_ms > 0.0) {
        return Err(format!("ibi_ms must be a positive number, got {ibi_ms}"));
    }
    Ok(IbiSample { t_ms, ibi_ms })
}

pub fn to_wire_line(sample: &IbiSample) -> String {
    serde_json::json!({ "t_ms": sample.t_ms, "ibi_ms": sample.ibi_ms }).to_string()
}

/// Counts lines and enforces ordering and the malformed-line limit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LineGuard {
    pub lines: usize,
    pub malformed: usize,
    pub accepted: usize,
    last_t_ms: Option<u64>,
}

impl LineGuard {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one parsed line. Returns the sample to emit, `None` for a
    /// skipped line, or an error once too many lines were malformed.
    /// Samples that do not move time forward count as malformed.
    pub fn feed(&mut self, parsed: Result<Option<IbiSample>, String>) -> Result<Option<IbiSample>> {
        let outcome = match parsed {
            Ok(None) => return Ok(None),
            Ok(Some(s)) if self.last_t_ms.is_some_and(|t| s.t_ms <= t) => {
                Err(format!("t_ms {} does not follow {}", s.t_ms, self.last_t_ms.unwrap_or(0)))
            }
            other => other.map(|s| s.expect("blank lines handled above")),
        };
        self.lines += 1;
        let last = match &outcome {
            Ok(_) => None,
            Err(reason) => {
                self.malformed += 1;
                tracing::debug!(line = self.lines, %reason, "skipping malformed line");
                Some(reason.clone())
            }
        };
        if self.lines >= MIN_LINES_FOR_ABORT && self.malformed as f64 > MAX_MALFORMED_FRACTION * self.lines as f64 {
            return Err(GatewayError::TooManyMalformed {
                malformed: self.malformed,
                lines: self.lines,
                last: last.unwrap_or_else(|| "earlier lines".into()),
            });
        }
        match outcome {
            Ok(sample) => {
                self.accepted += 1;
                self.last_t_ms = Some(sample.t_ms);
                Ok(Some(sample))
            }
            Err(_) => Ok(None),
        }
    }
}

/// Parses a replay file into per-row outcomes, in file order.
pub fn parse_replay_csv(text: &str) -> Result<Vec<Result<Option<IbiSample>, String>>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| GatewayError::Config(format!("replay header: {e}")))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t_ms", "ibi_ms"] {
        return Err(GatewayError::Config(format!("replay header must be `t_ms,ibi_ms`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    Ok(reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            if rec.len() != 2 {
                return Err(format!("expected 2 fields, found {}", rec.len()));
            }
            let t_ms = rec[0].parse::<u64>().map_err(|e| format!("t_ms `{}`: {e}", &rec[0]))?;
            let ibi_ms = rec[1].parse::<f64>().map_err(|e| format!("ibi_ms `{}`: {e}", &rec[1]))?;
            check(t_ms, ibi_ms).map(Some)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_schema() {
        assert_eq!(parse_wire_line(r#"{"t_ms":10,"ibi_ms":812.5}"#), Ok(Some(IbiSample { t_ms: 10, ibi_ms: 812.5 })));
        assert_eq!(parse_wire_line("  "), Ok(None));
        for bad in [
            r#"{"t_ms":1.5,"ibi_ms":800}"#,
            r#"{"t_ms":-1,"ibi_ms":800}"#,
            r#"{"t_ms":1,"ibi_ms":0}"#,
            r#"{"t_ms":1}"#,
            r#"{"t_ms":1,"ibi_ms":800,"x":1}"#,
            r#"{"t_ms":1,"ibi_ms":"800"}"#,
            "t_ms=1",
        ] {
            assert!(parse_wire_line(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn wire_round_trip() {
        let s = IbiSample { t_ms: 123, ibi_ms: 845.25 };
        assert_eq!(parse_wire_line(&to_wire_line(&s)), Ok(Some(s)));
    }

    #[test]
    fn guard_skips_out_of_order() {
        let mut g = LineGuard::new();
        assert!(g.feed(Ok(Some(IbiSample { t_ms: 10, ibi_ms: 800.0 }))).unwrap().is_some());
        assert!(g.feed(Ok(Some(IbiSample { t_ms: 10, ibi_ms: 800.0 }))).unwrap().is_none());
        assert_eq!((g.lines, g.malformed, g.accepted), (2, 1, 1));
    }

    #[test]
    fn replay_header_required() {
        assert!(parse_replay_csv("a,b\n1,2\n").is_err());
        let rows = parse_replay_csv("t_ms,ibi_ms\n1,800\nx,2\n3\n").unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].is_ok() && rows[1].is_err() && rows[2].is_err());
    }
}

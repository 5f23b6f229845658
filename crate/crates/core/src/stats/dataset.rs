//! Per-participant repeated measures for the 2x2 (x time) design.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{Attention, Condition, Feedback, ParticipantRecord};

pub const CSV_HEADER: [&str; 6] = ["participant_id", "attention", "feedback", "time", "measure", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Hrv,
    Nback,
    /// N-back accuracy at time 2 minus time 1, in percentage points. Derived.
    NbackDelta,
    Stai,
    Use,
}

impl Measure {
    pub const STORED: [Measure; 4] = [Measure::Hrv, Measure::Nback, Measure::Stai, Measure::Use];

    pub fn name(&self) -> &'static str {
        match self {
            Measure::Hrv => "hrv",
            Measure::Nback => "nback",
            Measure::NbackDelta => "nback_delta",
            Measure::Stai => "stai",
            Measure::Use => "use",
        }
    }

    pub fn is_derived(&self) -> bool {
        matches!(self, Measure::NbackDelta)
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hrv" | "rmssd" => Ok(Measure::Hrv),
            "nback" => Ok(Measure::Nback),
            "nback_delta" => Ok(Measure::NbackDelta),
            "stai" => Ok(Measure::Stai),
            "use" => Ok(Measure::Use),
            other => Err(Error::Validation(format!("unknown measure '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Attention,
    Feedback,
    Time,
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Factor::Attention => "attention",
            Factor::Feedback => "feedback",
            Factor::Time => "time",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRow {
    pub attention: Attention,
    pub feedback: Feedback,
    values: BTreeMap<(Measure, u8), f64>,
}

impl ParticipantRow {
    pub fn condition(&self) -> Condition {
        Condition::new(self.attention, self.feedback)
    }

    /// Level of a between-participant factor as 0 or 1.
    pub fn level(&self, factor: Factor) -> Option<usize> {
        match factor {
            Factor::Attention => Some(match self.attention {
                Attention::Ambient => 0,
                Attention::Focus => 1,
            }),
            Factor::Feedback => Some(match self.feedback {
                Feedback::Dynamic => 0,
                Feedback::Static => 1,
            }),
            Factor::Time => None,
        }
    }

    pub fn value(&self, measure: Measure, time: u8) -> Option<f64> {
        match measure {
            Measure::NbackDelta => match time {
                1 => Some(self.values.get(&(Measure::Nback, 2))? - self.values.get(&(Measure::Nback, 1))?),
                _ => None,
            },
            m => self.values.get(&(m, time)).copied(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    participants: BTreeMap<String, ParticipantRow>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    participant_id: String,
    attention: String,
    feedback: String,
    time: u8,
    measure: String,
    value: String,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    /// Participants in identifier order.
    pub fn participants(&self) -> impl Iterator<Item = (&str, &ParticipantRow)> {
        self.participants.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn participant(&self, id: &str) -> Option<&ParticipantRow> {
        self.participants.get(id)
    }

    pub fn add_participant(&mut self, id: &str, condition: Condition) -> Result<()> {
        match self.participants.get(id) {
            Some(row) if row.condition() != condition => Err(Error::Validation(format!(
                "participant {id} listed under {} and {condition}",
                row.condition()
            ))),
            Some(_) => Ok(()),
            None => {
                self.participants.insert(
                    id.to_string(),
                    ParticipantRow { attention: condition.attention, feedback: condition.feedback, values: BTreeMap::new() },
                );
                Ok(())
            }
        }
    }

    pub fn insert(&mut self, id: &str, measure: Measure, time: u8, value: f64) -> Result<()> {
        if measure.is_derived() {
            return Err(Error::Validation(format!("{measure} is derived and cannot be stored")));
        }
        if !value.is_finite() {
            return Err(Error::Validation(format!("{id} {measure} t{time}: value {value} is not finite")));
        }
        let row = self
            .participants
            .get_mut(id)
            .ok_or_else(|| Error::Validation(format!("unknown participant {id}")))?;
        if row.values.contains_key(&(measure, time)) {
            return Err(Error::Validation(format!("duplicate {measure} t{time} for {id}")));
        }
        row.values.insert((measure, time), value);
        Ok(())
    }

    /// Adds every participant and value of `other`. Fails without changing
    /// `self` on a condition clash or a value present in both.
    pub fn merge(&mut self, other: &Dataset) -> Result<()> {
        let mut out = self.clone();
        for (id, row) in &other.participants {
            out.add_participant(id, row.condition())?;
            for (&(m, t), &v) in &row.values {
                out.insert(id, m, t, v)?;
            }
        }
        *self = out;
        Ok(())
    }

    pub fn get(&self, id: &str, measure: Measure, time: u8) -> Option<f64> {
        self.participants.get(id)?.value(measure, time)
    }

    /// Time points at which `measure` has at least one value.
    pub fn times(&self, measure: Measure) -> Vec<u8> {
        if measure.is_derived() {
            return if self.participants.values().any(|p| p.value(measure, 1).is_some()) { vec![1] } else { vec![] };
        }
        let set: BTreeSet<u8> = self
            .participants
            .values()
            .flat_map(|p| p.values.keys().filter(|(m, _)| *m == measure).map(|(_, t)| *t))
            .collect();
        set.into_iter().collect()
    }

    pub fn has_measure(&self, measure: Measure) -> bool {
        !self.times(measure).is_empty()
    }

    pub fn from_records(records: &[ParticipantRecord]) -> Result<Self> {
        let mut data = Dataset::new();
        for r in records {
            let id = &r.participant_id;
            if data.participants.contains_key(id) {
                return Err(Error::Validation(format!("participant {id} appears twice")));
            }
            data.add_participant(id, r.condition)?;
            let series: [(Measure, &[Option<f64>]); 4] = [
                (Measure::Hrv, &r.hrv),
                (Measure::Nback, &r.nback),
                (Measure::Stai, &r.stai),
                (Measure::Use, std::slice::from_ref(&r.use_total)),
            ];
            for (measure, values) in series {
                for (i, v) in values.iter().enumerate() {
                    if let Some(v) = v {
                        data.insert(id, measure, i as u8 + 1, *v)?;
                    }
                }
            }
        }
        Ok(data)
    }

    /// Reads the long-format table. `NA` or an empty cell marks an absent
    /// value; lines starting with `#` are comments.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
        if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Parse { line: 1, message: format!("expected header {}", CSV_HEADER.join(",")) });
        }
        let mut data = Dataset::new();
        for record in rdr.records() {
            let record = record.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line() as usize), message: e.to_string() })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let at = |e: Error| Error::Parse { line, message: e.to_string() };
            let row: CsvRow = record.deserialize(Some(&headers)).map_err(|e| Error::Parse { line, message: e.to_string() })?;
            let condition = Condition::new(row.attention.parse().map_err(at)?, row.feedback.parse().map_err(at)?);
            data.add_participant(&row.participant_id, condition).map_err(at)?;
            let measure: Measure = row.measure.parse().map_err(at)?;
            if row.value.is_empty() || row.value.eq_ignore_ascii_case("na") {
                continue;
            }
            let value: f64 =
                row.value.parse().map_err(|_| Error::Parse { line, message: format!("bad value '{}'", row.value) })?;
            data.insert(&row.participant_id, measure, row.time, value).map_err(at)?;
        }
        Ok(data)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        Self::from_csv(text.as_bytes())
    }

    /// Long format, one row per stored value, ordered by participant,
    /// measure and time. Values print in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for (id, row) in &self.participants {
            for ((measure, time), value) in &row.values {
                w.write_record([
                    id.as_str(),
                    &row.attention.to_string(),
                    &row.feedback.to_string(),
                    &time.to_string(),
                    measure.name(),
                    &value.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

//! Per-round, per-aggregator measurements and their raw file formats.
//!
//! CSV: header `round,aggregator,loss,accuracy,messages,participants`, one
//! record per line, participants joined with `;`. Floats are written in
//! shortest round-trip form, so parsing the file recovers every value exactly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::NodeId;

pub const CSV_HEADER: &str = "round,aggregator,loss,accuracy,messages,participants";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: u32,
    pub aggregator: NodeId,
    pub loss: f64,
    pub accuracy: f64,
    /// Uplinks plus downlinks for this aggregation.
    pub messages: u64,
    /// Clients in schedule order, then the aggregator.
    pub participants: Vec<NodeId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no records")]
    NoRecords,
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("invalid JSON metrics: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub records: Vec<MetricsRecord>,
}

#[derive(Serialize)]
struct RoundMessages {
    round: u32,
    messages: u64,
}

#[derive(Serialize)]
struct JsonMirror<'a> {
    records: &'a [MetricsRecord],
    round_messages: Vec<RoundMessages>,
    total_messages: u64,
}

impl MetricsTable {
    pub fn rounds(&self) -> u32 {
        self.records.iter().map(|r| r.round).max().unwrap_or(0)
    }

    pub fn aggregators(&self) -> BTreeSet<NodeId> {
        self.records.iter().map(|r| r.aggregator).collect()
    }

    pub fn get(&self, round: u32, aggregator: NodeId) -> Option<&MetricsRecord> {
        self.records.iter().find(|r| r.round == round && r.aggregator == aggregator)
    }

    pub fn round(&self, round: u32) -> impl Iterator<Item = &MetricsRecord> {
        self.records.iter().filter(move |r| r.round == round)
    }

    pub fn messages_by_round(&self) -> BTreeMap<u32, u64> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.round).or_insert(0) += r.messages;
        }
        out
    }

    pub fn total_messages(&self) -> u64 {
        self.records.iter().map(|r| r.messages).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let participants: Vec<String> = r.participants.iter().map(ToString::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.round,
                r.aggregator,
                r.loss,
                r.accuracy,
                r.messages,
                participants.join(";")
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut records = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let raw = raw.trim();
            if raw.is_empty() || (line == 1 && raw == CSV_HEADER) {
                continue;
            }
            let bad = |msg: String| MetricsError::Malformed { line, msg };
            let fields: Vec<&str> = raw.split(',').collect();
            let [round, aggregator, loss, accuracy, messages, participants] = fields.as_slice() else {
                return Err(bad(format!("expected 6 fields, found {}", fields.len())));
            };
            let num = |name: &str, s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("invalid {name} `{s}`")));
            let int = |name: &str, s: &str| s.trim().parse::<u64>().map_err(|_| bad(format!("invalid {name} `{s}`")));
            let accuracy = num("accuracy", accuracy)?;
            if !(0.0..=1.0).contains(&accuracy) {
                return Err(bad(format!("accuracy {accuracy} outside [0, 1]")));
            }
            let participants = participants
                .split(';')
                .map(|p| p.trim().parse::<NodeId>().map_err(|_| bad(format!("invalid participant `{p}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            records.push(MetricsRecord {
                round: int("round", round)? as u32,
                aggregator: NodeId(int("aggregator", aggregator)? as u32),
                loss: num("loss", loss)?,
                accuracy,
                messages: int("messages", messages)?,
                participants,
            });
        }
        if records.is_empty() {
            return Err(MetricsError::NoRecords);
        }
        Ok(MetricsTable { records })
    }

    /// Full-precision JSON mirror, including per-round message totals.
    pub fn to_json(&self) -> String {
        let mirror = JsonMirror {
            records: &self.records,
            round_messages: self
                .messages_by_round()
                .into_iter()
                .map(|(round, messages)| RoundMessages { round, messages })
                .collect(),
            total_messages: self.total_messages(),
        };
        serde_json::to_string_pretty(&mirror).expect("metrics serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        let table: MetricsTable = serde_json::from_str(text).map_err(|e| MetricsError::Json(e.to_string()))?;
        if table.records.is_empty() {
            return Err(MetricsError::NoRecords);
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsTable {
        MetricsTable {
            records: vec![
                MetricsRecord {
                    round: 1,
                    aggregator: NodeId(4),
                    loss: 0.1 + 0.2,
                    accuracy: 0.9213,
                    messages: 4,
                    participants: vec![NodeId(2), NodeId(3), NodeId(4)],
                },
                MetricsRecord {
                    round: 2,
                    aggregator: NodeId(2),
                    loss: 1e-300,
                    accuracy: 1.0,
                    messages: 2,
                    participants: vec![NodeId(1), NodeId(2)],
                },
            ],
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let t = sample();
        let csv = t.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert!(csv.contains("1,4,0.30000000000000004,0.9213,4,2;3;4\n"));
        assert_eq!(MetricsTable::from_csv(&csv).unwrap(), t);
    }

    #[test]
    fn json_roundtrip() {
        let t = sample();
        let json = t.to_json();
        assert!(json.contains("\"total_messages\": 6"));
        assert_eq!(MetricsTable::from_json(&json).unwrap(), t);

        // Needs correctly rounded float parsing.
        let mut hard = sample();
        hard.records[0].loss = 1.1427430611269789;
        assert_eq!(MetricsTable::from_json(&hard.to_json()).unwrap(), hard);
    }

    #[test]
    fn csv_errors() {
        assert_eq!(MetricsTable::from_csv(""), Err(MetricsError::NoRecords));
        assert_eq!(MetricsTable::from_csv(&format!("{CSV_HEADER}\n")), Err(MetricsError::NoRecords));
        assert!(matches!(MetricsTable::from_csv("1,2,3\n"), Err(MetricsError::Malformed { line: 1, .. })));
        assert!(matches!(
            MetricsTable::from_csv(&format!("{CSV_HEADER}\n1,4,x,0.5,2,3;4\n")),
            Err(MetricsError::Malformed { line: 2, .. })
        ));
        assert!(MetricsTable::from_csv("1,4,0.3,1.5,2,3;4\n").is_err());
    }

    #[test]
    fn message_totals() {
        let t = sample();
        assert_eq!(t.total_messages(), 6);
        assert_eq!(t.messages_by_round(), BTreeMap::from([(1, 4), (2, 2)]));
        assert_eq!(t.rounds(), 2);
    }
}

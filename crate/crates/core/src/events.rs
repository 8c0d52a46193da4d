//! JSON Lines event stream format.
//!
//! ```text
//! {"type":"application","id":"a1","t_ms":1000,"features":[0.3,-1.2]}
//! {"type":"outcome","id":"a1","t_ms":5000,"label":1}
//! ```

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ApplicantEvent, Label, OutcomeEvent, StreamItem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum EventLine {
    Application {
        id: String,
        t_ms: i64,
        features: Vec<f64>,
    },
    Outcome {
        id: String,
        t_ms: i64,
        label: Label,
    },
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ParseError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::Malformed { line, .. } => Some(*line),
            ParseError::Io(_) => None,
        }
    }
}

/// Parses one event line (1-based `line_no` is used in errors).
pub fn parse_line(text: &str, line_no: usize) -> Result<StreamItem<f64>, ParseError> {
    let parsed: EventLine = serde_json::from_str(text).map_err(|e| ParseError::Malformed {
        line: line_no,
        message: e.to_string(),
    })?;
    Ok(match parsed {
        EventLine::Application { id, t_ms, features } => StreamItem::Application(ApplicantEvent {
            applicant_id: id,
            event_time_ms: t_ms,
            raw_features: features,
        }),
        EventLine::Outcome { id, t_ms, label } => StreamItem::Outcome(OutcomeEvent {
            applicant_id: id,
            outcome_time_ms: t_ms,
            label,
        }),
    })
}

/// Lazily parses a JSON Lines stream, skipping blank lines.
pub fn read_events<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<StreamItem<f64>, ParseError>> {
    reader
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|(i, l)| parse_line(&l?, i + 1))
}

/// Reads a whole stream, failing on the first malformed line.
pub fn read_all<R: BufRead>(reader: R) -> Result<Vec<StreamItem<f64>>, ParseError> {
    read_events(reader).collect()
}

pub fn encode_item(item: &StreamItem<f64>) -> String {
    let line = match item {
        StreamItem::Application(e) => EventLine::Application {
            id: e.applicant_id.clone(),
            t_ms: e.event_time_ms,
            features: e.raw_features.clone(),
        },
        StreamItem::Outcome(o) => EventLine::Outcome {
            id: o.applicant_id.clone(),
            t_ms: o.outcome_time_ms,
            label: o.label,
        },
    };
    serde_json::to_string(&line).expect("event lines always serialize")
}

pub fn write_events<W: Write>(mut w: W, items: &[StreamItem<f64>]) -> io::Result<()> {
    for item in items {
        w.write_all(encode_item(item).as_bytes())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

//! Canonical audit serialization and atomic file output.
//!
//! Audit lines have a fixed key order and every real is written with 17
//! significant digits, so a record round-trips exactly and two identical runs
//! produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tempfile::NamedTempFile;

use crate::policy::Decision;
use crate::runtime::{AuditSink, DecisionRecord, FeedbackEvent};
use crate::scoring::{AttributionVector, RiskAssessment};

/// Writes `v` with 17 significant digits in exponent form.
pub fn write_real(out: &mut String, v: f64) {
    if v.is_finite() {
        let _ = write!(out, "{v:.16e}");
    } else {
        out.push_str("null");
    }
}

fn write_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("strings always serialize"));
}

fn write_reals(out: &mut String, vs: &[f64]) {
    out.push('[');
    for (i, &v) in vs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_real(out, v);
    }
    out.push(']');
}

/// Canonical single-line JSON for one decision record (no trailing newline).
pub fn encode_record(r: &DecisionRecord) -> String {
    let a = &r.assessment;
    let mut s = String::with_capacity(256 + 48 * a.attributions.values.len());
    s.push_str("{\"applicant_id\":");
    write_str(&mut s, &r.applicant_id);
    let _ = write!(
        s,
        ",\"ingress_seq\":{},\"event_time_ms\":{},\"decision\":\"{}\",\"pd\":",
        r.ingress_seq,
        r.event_time_ms,
        r.decision.as_str()
    );
    write_real(&mut s, a.pd);
    s.push_str(",\"confidence\":");
    write_real(&mut s, a.confidence);
    s.push_str(",\"tau_used\":");
    write_real(&mut s, r.tau_used);
    s.push_str(",\"band_used\":");
    write_real(&mut s, r.band_used);
    let _ = write!(
        s,
        ",\"params_version\":{},\"scored_at_ms\":{},\"latency_us\":{},\"attributions\":",
        a.params_version, a.scored_at_ms, r.latency_us
    );
    write_reals(&mut s, &a.attributions.values);
    s.push_str(",\"ranking\":[");
    for (i, idx) in a.attributions.ranking.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{idx}");
    }
    s.push_str("],\"explanation\":[");
    for (i, (idx, v)) in r.explanation.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{{\"feature\":{idx},\"attribution\":");
        write_real(&mut s, *v);
        s.push('}');
    }
    s.push_str("]}");
    s
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplanationLine {
    feature: usize,
    attribution: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    applicant_id: String,
    ingress_seq: u64,
    event_time_ms: i64,
    decision: Decision,
    pd: f64,
    confidence: f64,
    tau_used: f64,
    band_used: f64,
    params_version: u64,
    scored_at_ms: i64,
    latency_us: u64,
    attributions: Vec<f64>,
    ranking: Vec<usize>,
    explanation: Vec<ExplanationLine>,
}

/// Parses one audit line back into a record.
pub fn decode_record(line: &str) -> Result<DecisionRecord, serde_json::Error> {
    let l: RecordLine = serde_json::from_str(line)?;
    Ok(DecisionRecord {
        assessment: RiskAssessment {
            applicant_id: l.applicant_id.clone(),
            pd: l.pd,
            confidence: l.confidence,
            attributions: AttributionVector {
                values: l.attributions,
                ranking: l.ranking,
            },
            params_version: l.params_version,
            scored_at_ms: l.scored_at_ms,
        },
        applicant_id: l.applicant_id,
        ingress_seq: l.ingress_seq,
        event_time_ms: l.event_time_ms,
        decision: l.decision,
        tau_used: l.tau_used,
        band_used: l.band_used,
        latency_us: l.latency_us,
        explanation: l
            .explanation
            .into_iter()
            .map(|e| (e.feature, e.attribution))
            .collect(),
    })
}

/// Reads every record of an audit file.
pub fn read_audit(path: &Path) -> io::Result<Vec<DecisionRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            decode_record(l).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
            })
        })
        .collect()
}

/// A file that only appears at its destination once committed.
///
/// Content goes to a temporary file in the destination directory and is
/// renamed into place by [`AtomicFile::commit`]. Dropping without committing
/// removes the temporary file and leaves any previous destination untouched.
pub struct AtomicFile {
    dest: PathBuf,
    tmp: BufWriter<NamedTempFile>,
}

impl AtomicFile {
    pub fn create(dest: impl AsRef<Path>) -> io::Result<Self> {
        let dest = dest.as_ref().to_path_buf();
        let dir = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let tmp = NamedTempFile::new_in(dir)?;
        Ok(Self {
            dest,
            tmp: BufWriter::new(tmp),
        })
    }

    pub fn commit(self) -> io::Result<()> {
        let tmp = self.tmp.into_inner().map_err(|e| e.into_error())?;
        tmp.as_file().sync_all()?;
        tmp.persist(&self.dest).map_err(|e| e.error)?;
        Ok(())
    }
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tmp.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.tmp.flush()
    }
}

/// Writes `bytes` to `dest` atomically.
pub fn write_atomic(dest: impl AsRef<Path>, bytes: &[u8]) -> io::Result<()> {
    let mut f = AtomicFile::create(dest)?;
    f.write_all(bytes)?;
    f.commit()
}

/// Streams canonical audit lines and feedback events to two writers.
pub struct JsonlSink<A, F> {
    audit: A,
    feedback: F,
    line: String,
}

impl<A: Write, F: Write> JsonlSink<A, F> {
    pub fn new(audit: A, feedback: F) -> Self {
        Self {
            audit,
            feedback,
            line: String::new(),
        }
    }

    pub fn into_inner(self) -> (A, F) {
        (self.audit, self.feedback)
    }
}

impl<A: Write + Send, F: Write + Send> AuditSink for JsonlSink<A, F> {
    fn record(&mut self, record: &DecisionRecord) -> io::Result<()> {
        self.line.clear();
        self.line.push_str(&encode_record(record));
        self.line.push('\n');
        self.audit.write_all(self.line.as_bytes())
    }

    fn feedback(&mut self, event: &FeedbackEvent) -> io::Result<()> {
        serde_json::to_writer(&mut self.feedback, event)?;
        self.feedback.write_all(b"\n")
    }

    fn terminal_error(&mut self, message: &str) -> io::Result<()> {
        serde_json::to_writer(
            &mut self.feedback,
            &serde_json::json!({ "terminal_error": message }),
        )?;
        self.feedback.write_all(b"\n")
    }
}

/// Encodes a whole audit in memory.
pub fn encode_audit(records: &[DecisionRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&encode_record(r));
        s.push('\n');
    }
    s
}

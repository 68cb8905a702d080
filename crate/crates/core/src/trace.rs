//! Canonical inference-trace records and the line-delimited trace file format.
//!
//! A trace file is UTF-8 text with one JSON object per line. An optional first
//! line of the form `{"header": {...}}` carries capture metadata (model, layer,
//! hidden-state pooling). Unknown fields are ignored so capture harnesses can
//! add their own annotations without breaking ingestion.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current trace record schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Largest hidden-state vector accepted inline.
pub const MAX_HIDDEN_DIM: usize = 8192;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate trace id {0:?}")]
    DuplicateId(String),
    #[error("trace {0:?} has no correctness label")]
    MissingLabel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    FreeForm,
    MultipleChoice,
    TrueFalse,
}

impl std::str::FromStr for AnswerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "free_form" => Ok(Self::FreeForm),
            "multiple_choice" => Ok(Self::MultipleChoice),
            "true_false" => Ok(Self::TrueFalse),
            other => Err(format!("unknown answer kind {other:?}")),
        }
    }
}

fn schema_default() -> u32 {
    SCHEMA_VERSION
}

/// Everything logged about one query: the small model's answer plus the
/// evidence each uncertainty scorer consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    #[serde(default = "schema_default")]
    pub schema: u32,
    pub id: String,
    #[serde(default)]
    pub dataset: String,
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub response: String,
    pub answer_kind: AnswerKind,
    /// Natural-log probabilities of the generated tokens.
    #[serde(default)]
    pub token_logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_option_logprob: Option<f64>,
    /// `(ln p("True"), ln p("False"))` from the self-evaluation follow-up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_false_logprobs: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbal_confidence_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

impl InferenceTrace {
    /// A bare trace with no evidence attached.
    pub fn new(id: impl Into<String>, answer_kind: AnswerKind) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            id: id.into(),
            dataset: String::new(),
            prompt: String::new(),
            response: String::new(),
            answer_kind,
            token_logprobs: Vec::new(),
            chosen_option_logprob: None,
            true_false_logprobs: None,
            hidden_state: None,
            samples: None,
            verbal_confidence_text: None,
            correct: None,
        }
    }

    /// Checks the per-record invariants. Returns a short reason on failure.
    pub fn validate(&self) -> Result<(), String> {
        if self.schema != SCHEMA_VERSION {
            return Err(format!("unsupported schema {}", self.schema));
        }
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        check_logprobs(&self.token_logprobs)?;
        if let Some(lp) = self.chosen_option_logprob {
            check_logprobs(&[lp])?;
        }
        if let Some((t, f)) = self.true_false_logprobs {
            check_logprobs(&[t, f])?;
        }
        if let Some(h) = &self.hidden_state {
            if h.is_empty() {
                return Err("empty hidden_state".into());
            }
            if h.len() > MAX_HIDDEN_DIM {
                return Err(format!(
                    "hidden_state dim {} exceeds {MAX_HIDDEN_DIM}",
                    h.len()
                ));
            }
            if h.iter().any(|v| !v.is_finite()) {
                return Err("non-finite hidden_state value".into());
            }
        }
        if let Some(s) = &self.samples {
            if s.len() < 2 {
                return Err(format!("samples has {} entries, need at least 2", s.len()));
            }
        }
        Ok(())
    }
}

fn check_logprobs(values: &[f64]) -> Result<(), String> {
    for &v in values {
        if v.is_nan() || v.is_infinite() {
            return Err("non-finite logprob".into());
        }
        if v > 0.0 {
            return Err("logprob > 0".into());
        }
    }
    Ok(())
}

/// Capture metadata carried on the optional first line of a trace file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_query: Option<usize>,
}

#[derive(Deserialize)]
struct HeaderLine {
    header: TraceHeader,
}

#[derive(Serialize)]
struct HeaderLineRef<'a> {
    header: &'a TraceHeader,
}

/// An ordered, immutable collection of traces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceSet {
    pub records: Vec<InferenceTrace>,
    pub source: String,
    pub header: Option<TraceHeader>,
}

impl TraceSet {
    pub fn new(records: Vec<InferenceTrace>, source: impl Into<String>) -> Self {
        Self {
            records,
            source: source.into(),
            header: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, InferenceTrace> {
        self.records.iter()
    }

    /// Correctness labels keyed by trace id; unlabeled records are skipped.
    pub fn labels(&self) -> crate::labels::Labels {
        self.records
            .iter()
            .filter_map(|t| t.correct.map(|c| (t.id.clone(), c)))
            .collect()
    }

    /// Writes the set in the trace file format.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        if let Some(h) = &self.header {
            serde_json::to_writer(&mut out, &HeaderLineRef { header: h })?;
            out.write_all(b"\n")?;
        }
        for rec in &self.records {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

impl<'a> IntoIterator for &'a TraceSet {
    type Item = &'a InferenceTrace;
    type IntoIter = std::slice::Iter<'a, InferenceTrace>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

/// Serializes a single record as one trace-file line (without the newline).
pub fn to_line(trace: &InferenceTrace) -> String {
    serde_json::to_string(trace).expect("trace records always serialize")
}

/// Serializes a header as the first line of a trace file (without the newline).
pub fn header_line(header: &TraceHeader) -> String {
    serde_json::to_string(&HeaderLineRef { header }).expect("headers always serialize")
}

/// Parses trace-file content from a reader. Line numbers in errors are 1-based.
pub fn read_traces<R: BufRead>(
    reader: R,
    source: impl Into<String>,
    require_labels: bool,
) -> Result<TraceSet, TraceError> {
    let mut records = Vec::new();
    let mut header = None;
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if records.is_empty() && header.is_none() && text.starts_with("{\"header\"") {
            let h: HeaderLine = serde_json::from_str(text).map_err(|e| {
                TraceError::MalformedRecord {
                    line: line_no,
                    reason: e.to_string(),
                }
            })?;
            header = Some(h.header);
            continue;
        }
        let rec: InferenceTrace =
            serde_json::from_str(text).map_err(|e| TraceError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        rec.validate()
            .map_err(|reason| TraceError::MalformedRecord {
                line: line_no,
                reason,
            })?;
        if !seen.insert(rec.id.clone()) {
            return Err(TraceError::DuplicateId(rec.id));
        }
        if require_labels && rec.correct.is_none() {
            return Err(TraceError::MissingLabel(rec.id));
        }
        records.push(rec);
    }
    Ok(TraceSet {
        records,
        source: source.into(),
        header,
    })
}

/// Loads a trace file, preserving file order.
pub fn load_traces(path: impl AsRef<Path>, require_labels: bool) -> Result<TraceSet, TraceError> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    read_traces(
        BufReader::new(file),
        path.display().to_string(),
        require_labels,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, lps: &str, correct: bool) -> String {
        format!(
            r#"{{"schema":1,"id":"{id}","dataset":"d","prompt":"p","response":"r","answer_kind":"free_form","token_logprobs":{lps},"correct":{correct}}}"#
        )
    }

    #[test]
    fn loads_in_file_order() {
        let text = [
            line("q3", "[-0.1]", true),
            line("q1", "[-0.2,-0.3]", false),
            line("q2", "[]", true),
        ]
        .join("\n");
        let set = read_traces(text.as_bytes(), "mem", true).unwrap();
        let ids: Vec<_> = set.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["q3", "q1", "q2"]);
        assert_eq!(set.records[1].token_logprobs, vec![-0.2, -0.3]);
    }

    #[test]
    fn positive_logprob_is_malformed() {
        let text = [line("a", "[-0.1]", true), line("b", "[0.3]", true)].join("\n");
        match read_traces(text.as_bytes(), "mem", false) {
            Err(TraceError::MalformedRecord { line, reason }) => {
                assert_eq!(line, 2);
                assert_eq!(reason, "logprob > 0");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = [line("q7", "[]", true), line("q7", "[]", false)].join("\n");
        assert!(matches!(
            read_traces(text.as_bytes(), "mem", false),
            Err(TraceError::DuplicateId(id)) if id == "q7"
        ));
    }

    #[test]
    fn missing_label_only_when_required() {
        let text = r#"{"id":"u1","answer_kind":"multiple_choice","chosen_option_logprob":-0.5}"#;
        assert!(read_traces(text.as_bytes(), "mem", false).is_ok());
        assert!(matches!(
            read_traces(text.as_bytes(), "mem", true),
            Err(TraceError::MissingLabel(id)) if id == "u1"
        ));
    }

    #[test]
    fn unknown_fields_ignored_and_scientific_floats_accepted() {
        let text = r#"{"id":"x","answer_kind":"free_form","token_logprobs":[-1e-3,-2.5E0],"extra":{"a":1}}"#;
        let set = read_traces(text.as_bytes(), "mem", false).unwrap();
        assert_eq!(set.records[0].token_logprobs, vec![-0.001, -2.5]);
    }

    #[test]
    fn header_line_parsed() {
        let text = format!(
            "{}\n{}",
            r#"{"header":{"model":"tiny","layer":-8,"pooling":"last_token"}}"#,
            line("a", "[]", true)
        );
        let set = read_traces(text.as_bytes(), "mem", false).unwrap();
        let h = set.header.unwrap();
        assert_eq!(h.pooling.as_deref(), Some("last_token"));
        assert_eq!(h.layer, Some(-8));
        assert_eq!(set.records.len(), 1);
    }

    #[test]
    fn invariant_violations() {
        let short = r#"{"id":"s","answer_kind":"free_form","samples":["only one"]}"#;
        assert!(read_traces(short.as_bytes(), "m", false).is_err());
        let wrong_schema = r#"{"schema":2,"id":"s","answer_kind":"free_form"}"#;
        assert!(read_traces(wrong_schema.as_bytes(), "m", false).is_err());
        let big = format!(
            r#"{{"id":"h","answer_kind":"free_form","hidden_state":[{}]}}"#,
            vec!["0.0"; MAX_HIDDEN_DIM + 1].join(",")
        );
        assert!(read_traces(big.as_bytes(), "m", false).is_err());
        let bad_tf = r#"{"id":"t","answer_kind":"true_false","true_false_logprobs":[-0.1,0.2]}"#;
        assert!(read_traces(bad_tf.as_bytes(), "m", false).is_err());
    }
}

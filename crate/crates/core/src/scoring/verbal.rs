//! Parsing of numeric confidences stated in model text.

use std::sync::LazyLock;

use regex::Regex;

use super::{ConfidenceScore, ScoreError, UqMethod};
use crate::trace::InferenceTrace;

/// Which capture prompt produced the text. Parsing is identical for both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerbalVariant {
    /// Answer and confidence in one response.
    OneStep,
    /// Confidence asked for in a follow-up turn.
    TwoStep,
}

impl VerbalVariant {
    pub fn method(self) -> UqMethod {
        match self {
            VerbalVariant::OneStep => UqMethod::Verbalization1s,
            VerbalVariant::TwoStep => UqMethod::Verbalization2s,
        }
    }
}

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?|\.\d+").expect("valid regex"));
static CUE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)confidence").expect("valid regex"));

/// Extracts a confidence in `[0, 1]` from free text, or `None` when the text
/// holds no usable number.
///
/// Takes the last number after the first "confidence" cue, or the only number
/// in the text when there is no cue. Values in `(1, 100]` are read as percents.
pub fn parse_verbalized_text(text: &str) -> Option<f64> {
    let raw = match CUE.find(text) {
        Some(cue) => NUMBER.find_iter(&text[cue.end()..]).last()?.as_str(),
        None => {
            let mut all = NUMBER.find_iter(text);
            let only = all.next()?;
            if all.next().is_some() {
                return None;
            }
            only.as_str()
        }
    };
    let mut v: f64 = raw.parse().ok()?;
    if v > 1.0 && v <= 100.0 {
        v /= 100.0;
    }
    Some(v.clamp(0.0, 1.0))
}

/// A [`ScoreError::NonCompliant`] result means the model ignored the
/// instruction; callers drop the query instead of scoring it zero.
pub fn parse_verbalized(
    trace: &InferenceTrace,
    variant: VerbalVariant,
) -> Result<ConfidenceScore, ScoreError> {
    let text = trace
        .verbal_confidence_text
        .as_deref()
        .ok_or(ScoreError::MissingField("verbal_confidence_text"))?;
    let value =
        parse_verbalized_text(text).ok_or_else(|| ScoreError::NonCompliant(trace.id.clone()))?;
    Ok(ConfidenceScore::new(variant.method(), value, trace.id.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::AnswerKind;

    #[test]
    fn percent_and_unit_scales() {
        assert_eq!(parse_verbalized_text("Answer: B. Confidence: 85"), Some(0.85));
        assert_eq!(parse_verbalized_text("confidence: 0.9"), Some(0.9));
        assert_eq!(parse_verbalized_text("CONFIDENCE = 100%"), Some(1.0));
        assert_eq!(parse_verbalized_text("Confidence: 1"), Some(1.0));
        assert_eq!(parse_verbalized_text("Confidence: 250"), Some(1.0));
        assert_eq!(parse_verbalized_text("Confidence: .75"), Some(0.75));
    }

    #[test]
    fn cue_takes_last_number_after_it() {
        // the answer "3" precedes the cue and must be ignored
        assert_eq!(
            parse_verbalized_text("The answer is 3. Confidence level (0-100): 70"),
            Some(0.7)
        );
    }

    #[test]
    fn no_cue_needs_a_single_number() {
        assert_eq!(parse_verbalized_text("80%"), Some(0.8));
        assert_eq!(parse_verbalized_text("between 60 and 80"), None);
        assert_eq!(parse_verbalized_text("I am not sure."), None);
        assert_eq!(parse_verbalized_text("Confidence: high"), None);
    }

    #[test]
    fn trace_level_errors() {
        let mut t = InferenceTrace::new("q1", AnswerKind::FreeForm);
        assert_eq!(
            parse_verbalized(&t, VerbalVariant::OneStep),
            Err(ScoreError::MissingField("verbal_confidence_text"))
        );
        t.verbal_confidence_text = Some("I am not sure.".into());
        assert_eq!(
            parse_verbalized(&t, VerbalVariant::TwoStep),
            Err(ScoreError::NonCompliant("q1".into()))
        );
        t.verbal_confidence_text = Some("confidence 40".into());
        let s = parse_verbalized(&t, VerbalVariant::TwoStep).unwrap();
        assert_eq!(s.method, UqMethod::Verbalization2s);
        assert_eq!(s.value, 0.4);
    }
}

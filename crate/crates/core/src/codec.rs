//! Extraction and validation of `{"Score": ...}` replies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("no JSON object in response")]
    NoJsonObject,
    #[error("response JSON is not an object")]
    NotAnObject,
    #[error("missing key \"{0}\"")]
    MissingKey(&'static str),
    #[error("score is not numeric: {0}")]
    NotNumeric(String),
    #[error("score {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("unknown category {0}")]
    UnknownCategory(String),
    #[error("cannot average an empty list")]
    EmptyList,
}

/// The five predefined fit labels, from worst to best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FitCategory {
    #[serde(rename = "Near-Impossible")]
    NearImpossible,
    Low,
    Medium,
    High,
    #[serde(rename = "Near-Perfect")]
    NearPerfect,
}

impl FitCategory {
    pub const ALL: [FitCategory; 5] = [
        FitCategory::NearImpossible,
        FitCategory::Low,
        FitCategory::Medium,
        FitCategory::High,
        FitCategory::NearPerfect,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FitCategory::NearImpossible => "Near-Impossible",
            FitCategory::Low => "Low",
            FitCategory::Medium => "Medium",
            FitCategory::High => "High",
            FitCategory::NearPerfect => "Near-Perfect",
        }
    }

    pub fn value(self) -> f64 {
        category_value(self)
    }

    /// Category whose value is closest to `v`; halfway points round up.
    pub fn nearest(v: f64) -> FitCategory {
        let idx = (v.clamp(0.0, 1.0) * 4.0 + 0.5).floor() as usize;
        FitCategory::ALL[idx.min(4)]
    }
}

impl fmt::Display for FitCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FitCategory {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        FitCategory::ALL
            .into_iter()
            .find(|c| c.label().eq_ignore_ascii_case(t))
            .ok_or_else(|| CodecError::UnknownCategory(s.to_string()))
    }
}

pub fn category_value(c: FitCategory) -> f64 {
    match c {
        FitCategory::NearImpossible => 0.0,
        FitCategory::Low => 0.25,
        FitCategory::Medium => 0.5,
        FitCategory::High => 0.75,
        FitCategory::NearPerfect => 1.0,
    }
}

/// Returns the first balanced `{...}` region of `text` that parses as a JSON
/// object. Surrounding prose is ignored.
pub fn extract_json(text: &str) -> Result<Map<String, Value>, CodecError> {
    let bytes = text.as_bytes();
    for (start, _) in text.match_indices('{') {
        if let Some(end) = balanced_end(bytes, start) {
            if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(&text[start..=end]) {
                return Ok(obj);
            }
        }
    }
    match serde_json::from_str::<Value>(text.trim()) {
        Ok(Value::Object(obj)) => Ok(obj),
        Ok(_) => Err(CodecError::NotAnObject),
        Err(_) => Err(CodecError::NoJsonObject),
    }
}

// Index of the `}` closing the `{` at `start`, skipping braces inside strings.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Reads `Score` as a number in [0, 1]. Quoted numbers are accepted.
pub fn parse_numeric(obj: &Map<String, Value>) -> Result<f64, CodecError> {
    let raw = obj.get("Score").ok_or(CodecError::MissingKey("Score"))?;
    let v = match raw {
        Value::Number(n) => n.as_f64().ok_or_else(|| CodecError::NotNumeric(raw.to_string()))?,
        Value::String(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| CodecError::NotNumeric(raw.to_string()))?,
        _ => return Err(CodecError::NotNumeric(raw.to_string())),
    };
    if !v.is_finite() {
        return Err(CodecError::NotNumeric(raw.to_string()));
    }
    if !(0.0..=1.0).contains(&v) {
        return Err(CodecError::OutOfRange(v));
    }
    Ok(v)
}

/// Reads `Score` as one of the five labels (case-insensitive, trimmed).
pub fn parse_categorical(obj: &Map<String, Value>) -> Result<FitCategory, CodecError> {
    match obj.get("Score").ok_or(CodecError::MissingKey("Score"))? {
        Value::String(s) => s.parse(),
        other => Err(CodecError::UnknownCategory(other.to_string())),
    }
}

pub fn average(values: &[f64]) -> Result<f64, CodecError> {
    if values.is_empty() {
        return Err(CodecError::EmptyList);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreSource {
    NumericDirect,
    CategoricalMapped,
    SentenceAveraged,
    BackoffNumeric,
    BackoffCategorical,
}

impl ScoreSource {
    pub fn is_backoff(self) -> bool {
        matches!(self, ScoreSource::BackoffNumeric | ScoreSource::BackoffCategorical)
    }
}

/// Sentence-context bookkeeping carried on an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextCounts {
    pub candidates: usize,
    pub usable: usize,
}

/// Model-derived fit score for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutcome {
    pub item_id: String,
    pub value: f64,
    pub source: ScoreSource,
    #[serde(default)]
    pub components: Option<Vec<f64>>,
    pub raw_text: String,
    #[serde(default)]
    pub reasoning_texts: Option<Vec<String>>,
    #[serde(default)]
    pub annotation: Option<String>,
    #[serde(default)]
    pub context: Option<ContextCounts>,
}

impl ScoreOutcome {
    /// Checks the value range and the averaging invariant.
    pub fn is_consistent(&self) -> bool {
        if !(0.0..=1.0).contains(&self.value) {
            return false;
        }
        match (&self.source, &self.components) {
            (ScoreSource::SentenceAveraged, Some(c)) => {
                average(c).map(|m| (m - self.value).abs() <= 1e-12).unwrap_or(false)
            }
            (ScoreSource::SentenceAveraged, None) => false,
            _ => true,
        }
    }

    /// Incoherent candidate sentences seen while building this item's context.
    pub fn incoherent(&self) -> usize {
        self.context.map(|c| c.candidates - c.usable).unwrap_or(0)
    }
}

/// Parses a model reply into a unit-interval value for the given output form.
pub fn parse_score(text: &str, output: crate::prompt::OutputForm) -> Result<f64, CodecError> {
    let obj = extract_json(text)?;
    match output {
        crate::prompt::OutputForm::Numeric => parse_numeric(&obj),
        crate::prompt::OutputForm::Categorical => parse_categorical(&obj).map(category_value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extract_cases() {
        let o = extract_json(r#"{"Score": 0.8}"#).unwrap();
        assert_eq!(o["Score"], 0.8);
        let o = extract_json(r#"Sure! {"Score": "High"} Hope that helps."#).unwrap();
        assert_eq!(o["Score"], "High");
        assert_eq!(extract_json("no json here"), Err(CodecError::NoJsonObject));
        assert_eq!(extract_json("[1, 2]"), Err(CodecError::NotAnObject));
        let o = extract_json(r#"{bad} then {"Score": "a}b"} and {"x": 1}"#).unwrap();
        assert_eq!(o["Score"], "a}b");
        let o = extract_json(r#"```json
{"Score": {"inner": 1}}
```"#)
        .unwrap();
        assert!(o["Score"].is_object());
    }

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn numeric_cases() {
        assert_eq!(parse_numeric(&obj(serde_json::json!({"Score": 0.8}))), Ok(0.8));
        assert_eq!(parse_numeric(&obj(serde_json::json!({"Score": "0.75"}))), Ok(0.75));
        assert_eq!(parse_numeric(&obj(serde_json::json!({"Score": 1}))), Ok(1.0));
        assert_eq!(parse_numeric(&obj(serde_json::json!({"Score": 1.5}))), Err(CodecError::OutOfRange(1.5)));
        assert_eq!(parse_numeric(&obj(serde_json::json!({"score": 0.5}))), Err(CodecError::MissingKey("Score")));
        assert!(matches!(parse_numeric(&obj(serde_json::json!({"Score": "high"}))), Err(CodecError::NotNumeric(_))));
        assert!(matches!(parse_numeric(&obj(serde_json::json!({"Score": "NaN"}))), Err(CodecError::NotNumeric(_))));
        assert!(matches!(parse_numeric(&obj(serde_json::json!({"Score": true}))), Err(CodecError::NotNumeric(_))));
    }

    #[test]
    fn categorical_cases() {
        let p = |v| parse_categorical(&obj(v));
        assert_eq!(p(serde_json::json!({"Score": "High"})), Ok(FitCategory::High));
        assert_eq!(p(serde_json::json!({"Score": "near-perfect"})), Ok(FitCategory::NearPerfect));
        assert_eq!(p(serde_json::json!({"Score": "  LOW "})), Ok(FitCategory::Low));
        assert!(matches!(p(serde_json::json!({"Score": "Very High"})), Err(CodecError::UnknownCategory(_))));
        assert!(matches!(p(serde_json::json!({"Score": 0.5})), Err(CodecError::UnknownCategory(_))));
        assert_eq!(p(serde_json::json!({})), Err(CodecError::MissingKey("Score")));
    }

    #[test]
    fn category_values() {
        assert_eq!(category_value(FitCategory::NearImpossible), 0.0);
        assert_eq!(category_value(FitCategory::Medium), 0.5);
        assert_eq!(category_value(FitCategory::NearPerfect), 1.0);
    }

    #[test]
    fn nearest_category() {
        assert_eq!(FitCategory::nearest(0.0), FitCategory::NearImpossible);
        assert_eq!(FitCategory::nearest(0.12), FitCategory::NearImpossible);
        assert_eq!(FitCategory::nearest(0.125), FitCategory::Low);
        assert_eq!(FitCategory::nearest(0.6), FitCategory::Medium);
        assert_eq!(FitCategory::nearest(0.9), FitCategory::NearPerfect);
        assert_eq!(FitCategory::nearest(1.0), FitCategory::NearPerfect);
    }

    #[test]
    fn average_cases() {
        assert_eq!(average(&[0.5]), Ok(0.5));
        assert_eq!(average(&[0.0, 1.0]), Ok(0.5));
        assert!((average(&[0.75, 0.75, 0.5]).unwrap() - 0.66667).abs() < 1e-5);
        assert_eq!(average(&[]), Err(CodecError::EmptyList));
    }

    #[test]
    fn outcome_consistency() {
        let mut o = ScoreOutcome {
            item_id: "x".into(),
            value: 0.5,
            source: ScoreSource::SentenceAveraged,
            components: Some(vec![0.25, 0.75]),
            raw_text: String::new(),
            reasoning_texts: None,
            annotation: None,
            context: None,
        };
        assert!(o.is_consistent());
        o.components = Some(vec![0.25]);
        assert!(!o.is_consistent());
        o.components = None;
        assert!(!o.is_consistent());
    }

    fn prose() -> impl Strategy<Value = String> {
        // Prose without braces or quotes so the only object is the embedded one.
        "[a-zA-Z0-9 .,!?:\n-]{0,40}"
    }

    proptest! {
        #[test]
        fn extract_survives_surrounding_prose(pre in prose(), post in prose(), v in 0.0f64..=1.0, quoted in any::<bool>()) {
            let body = if quoted {
                serde_json::json!({"Score": v.to_string()})
            } else {
                serde_json::json!({"Score": v})
            };
            let text = format!("{pre}{body}{post}");
            let got = parse_numeric(&extract_json(&text).unwrap()).unwrap();
            prop_assert_eq!(got, v);
        }

        #[test]
        fn extract_categorical_with_prose(pre in prose(), post in prose(), idx in 0usize..5) {
            let c = FitCategory::ALL[idx];
            let text = format!("{pre}{}{post}", serde_json::json!({"Score": c.label()}));
            prop_assert_eq!(parse_categorical(&extract_json(&text).unwrap()).unwrap(), c);
        }

        #[test]
        fn parse_numeric_stays_in_unit_interval(v in -10.0f64..10.0) {
            let o = obj(serde_json::json!({"Score": v}));
            if let Ok(x) = parse_numeric(&o) {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn average_bounded_and_permutation_invariant(mut xs in prop::collection::vec(0.0f64..=1.0, 1..20)) {
            let a = average(&xs).unwrap();
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
            xs.reverse();
            prop_assert!((average(&xs).unwrap() - a).abs() < 1e-12);
        }
    }
}

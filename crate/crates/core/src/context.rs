//! Generated-sentence context: ask the model for five sentences using the
//! item, keep the ones a second call judges coherent, and back off to the
//! lemma tuple when none survive.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::codec::extract_json;
use crate::gateway::{Exchange, Gateway, GatewayError, Message, ModelParams};
use crate::norms::NormItem;
use crate::prompt::TemplateSet;

pub const MAX_SENTENCES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSentence {
    pub text: String,
    pub coherent: bool,
    pub verdict_raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    pub item_id: String,
    pub candidates: Vec<CandidateSentence>,
    pub usable: Vec<String>,
    pub backoff: bool,
    /// The generation call.
    pub generation: Exchange,
    /// One verification call per candidate, in candidate order.
    pub verifications: Vec<Exchange>,
}

impl ContextSet {
    pub fn incoherent(&self) -> usize {
        self.candidates.len() - self.usable.len()
    }
}

/// A gateway failure while building context, with the calls that did
/// complete so they can still be transcribed.
#[derive(Debug, thiserror::Error)]
#[error("context building failed: {source}")]
pub struct ContextError {
    #[source]
    pub source: GatewayError,
    pub failed_request: Vec<Message>,
    /// Candidate index of the failed verification; `None` if generation failed.
    pub failed_index: Option<usize>,
    pub generation: Option<Exchange>,
    pub verifications: Vec<Exchange>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub sentences: Vec<String>,
    pub exchange: Exchange,
}

fn list_item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+\s*[.):]|[-*\u{2022}])\s+(.+?)\s*$").expect("valid regex"))
}

fn json_list(text: &str) -> Option<Vec<String>> {
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    if end <= start {
        return None;
    }
    match serde_json::from_str::<Value>(&text[start..=end]).ok()? {
        Value::Array(xs) => Some(xs.into_iter().filter_map(|v| v.as_str().map(str::to_string)).collect()),
        _ => None,
    }
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}')] {
        if let Some(inner) = s.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            return inner.trim();
        }
    }
    s
}

/// Parses a numbered/bulleted list or a JSON array of strings. Prose with
/// no list yields an empty vector. At most [`MAX_SENTENCES`] are kept.
pub fn parse_sentence_list(text: &str) -> Vec<String> {
    let items = json_list(text).unwrap_or_else(|| {
        text.lines()
            .filter_map(|line| list_item_re().captures(line).map(|c| c[1].to_string()))
            .collect()
    });
    items
        .iter()
        .map(|s| unquote(s).to_string())
        .filter(|s| !s.is_empty())
        .take(MAX_SENTENCES)
        .collect()
}

/// Reads `{"Coherent": true|false}`; anything unparseable is incoherent.
pub fn parse_verdict(text: &str) -> bool {
    match extract_json(text).ok().and_then(|o| o.get("Coherent").cloned()) {
        Some(Value::Bool(b)) => b,
        Some(Value::String(s)) => s.trim().eq_ignore_ascii_case("true"),
        _ => false,
    }
}

fn single_call(gateway: &Gateway, text: String, params: &ModelParams) -> Result<Exchange, GatewayError> {
    let request = vec![Message::user(text)];
    let response = gateway.complete(&request, params)?;
    Ok(Exchange {
        step_index: 0,
        request,
        response,
    })
}

pub fn generate_sentences(
    item: &NormItem,
    gateway: &Gateway,
    params: &ModelParams,
    templates: &TemplateSet,
    propbank_prefix: bool,
) -> Result<Generation, GatewayError> {
    let exchange = single_call(gateway, templates.generation_prompt(item, propbank_prefix), params)?;
    Ok(Generation {
        sentences: parse_sentence_list(&exchange.response.text),
        exchange,
    })
}

pub fn verify_coherence(
    sentence: &str,
    item: &NormItem,
    gateway: &Gateway,
    params: &ModelParams,
    templates: &TemplateSet,
    propbank_prefix: bool,
) -> Result<(CandidateSentence, Exchange), GatewayError> {
    let exchange = single_call(gateway, templates.verification_prompt(sentence, item, propbank_prefix), params)?;
    let verdict_raw = exchange.response.text.clone();
    Ok((
        CandidateSentence {
            text: sentence.to_string(),
            coherent: parse_verdict(&verdict_raw),
            verdict_raw,
        },
        exchange,
    ))
}

/// Generates and verifies candidates. Verification calls run concurrently
/// (bounded by the gateway) and are reassembled in candidate order.
pub fn build_context(
    item: &NormItem,
    gateway: &Gateway,
    params: &ModelParams,
    templates: &TemplateSet,
    propbank_prefix: bool,
) -> Result<ContextSet, Box<ContextError>> {
    let generated = generate_sentences(item, gateway, params, templates, propbank_prefix).map_err(|source| {
        Box::new(ContextError {
            source,
            failed_request: vec![Message::user(templates.generation_prompt(item, propbank_prefix))],
            failed_index: None,
            generation: None,
            verifications: Vec::new(),
        })
    })?;
    let results: Vec<Result<(CandidateSentence, Exchange), GatewayError>> = std::thread::scope(|s| {
        let handles: Vec<_> = generated
            .sentences
            .iter()
            .enumerate()
            .map(|(i, sentence)| {
                s.spawn(move || {
                    verify_coherence(sentence, item, gateway, params, templates, propbank_prefix).map(|(c, mut ex)| {
                        ex.step_index = i;
                        (c, ex)
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("verification thread panicked"))
            .collect()
    });

    let mut candidates = Vec::with_capacity(results.len());
    let mut verifications = Vec::with_capacity(results.len());
    let mut first_error = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((c, ex)) => {
                candidates.push(c);
                verifications.push(ex);
            }
            Err(e) => {
                first_error.get_or_insert((i, e));
            }
        }
    }
    if let Some((i, source)) = first_error {
        return Err(Box::new(ContextError {
            source,
            failed_request: vec![Message::user(templates.verification_prompt(
                &generated.sentences[i],
                item,
                propbank_prefix,
            ))],
            failed_index: Some(i),
            generation: Some(generated.exchange),
            verifications,
        }));
    }
    let usable: Vec<String> = candidates
        .iter()
        .filter(|c| c.coherent)
        .map(|c| c.text.clone())
        .collect();
    Ok(ContextSet {
        item_id: item.item_id.clone(),
        backoff: usable.is_empty(),
        candidates,
        usable,
        generation: generated.exchange,
        verifications,
    })
}

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use super::{Backend, BackendError, BackendReply, CacheKey, Message, ModelParams};
use crate::codec::FitCategory;
use crate::norms::{Dataset, NormItem, Role};

type ReplyFn = dyn Fn(&[Message], &ModelParams) -> Result<String, BackendError> + Send + Sync;

/// Backend driven by a closure.
pub struct FnMock {
    f: Box<ReplyFn>,
}

impl FnMock {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&[Message], &ModelParams) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        FnMock { f: Box::new(f) }
    }
}

impl Backend for FnMock {
    fn send(&self, messages: &[Message], params: &ModelParams) -> Result<BackendReply, BackendError> {
        (self.f)(messages, params).map(BackendReply::stop)
    }
}

/// Backend answering from a fixed `CacheKey -> text` table.
#[derive(Debug, Default, Clone)]
pub struct ScriptedMock {
    replies: HashMap<CacheKey, String>,
}

impl ScriptedMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn respond(mut self, key: CacheKey, text: impl Into<String>) -> Self {
        self.replies.insert(key, text.into());
        self
    }
}

impl Backend for ScriptedMock {
    fn send(&self, messages: &[Message], params: &ModelParams) -> Result<BackendReply, BackendError> {
        let key = CacheKey::compute(params, messages);
        self.replies
            .get(&key)
            .map(BackendReply::stop)
            .ok_or_else(|| BackendError::Rejected(format!("no scripted reply for key {}", key.short())))
    }
}

/// How [`NormOracleMock`] turns an item's normalized human rating into a score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreMapping {
    /// The normalized rating itself.
    Identity,
    /// One minus the normalized rating.
    Antitone,
    /// Rating plus a deterministic per-item offset in [-amplitude, amplitude].
    Noisy { amplitude: f64 },
}

/// Coherence verdicts returned by [`NormOracleMock`] for generated sentences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MockVerdicts {
    AllCoherent,
    NoneCoherent,
    /// Sentences numbered 1..=n are coherent, later ones are not.
    FirstN(usize),
    /// Replies with unparseable text.
    Garbled,
}

/// Dataset-aware mock: recognizes generation, verification, reasoning and
/// scoring prompts and answers from the items' human ratings.
#[derive(Debug, Clone)]
pub struct NormOracleMock {
    items: HashMap<(String, String), Vec<NormItem>>,
    mapping: ScoreMapping,
    verdicts: MockVerdicts,
    sentences: usize,
    sentence_jitter: f64,
    unparseable_scores: bool,
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("valid regex"))
}

fn predicate_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"predicate '([^']*)'")
}

fn argument_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"argument '([^']*)'|is '([^']*)'")
}

fn role_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"\b(Arg0|Arg1|Arg2|Instrument|Location)\b")
}

fn sentence_no_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"Sentence (\d+):")
}

impl NormOracleMock {
    pub fn new<'a>(datasets: impl IntoIterator<Item = &'a Dataset>) -> Self {
        let mut items: HashMap<(String, String), Vec<NormItem>> = HashMap::new();
        for d in datasets {
            for it in &d.items {
                items
                    .entry((it.predicate.clone(), it.argument.clone()))
                    .or_default()
                    .push(it.clone());
            }
        }
        NormOracleMock {
            items,
            mapping: ScoreMapping::Identity,
            verdicts: MockVerdicts::AllCoherent,
            sentences: 5,
            sentence_jitter: 0.0,
            unparseable_scores: false,
        }
    }

    pub fn mapping(mut self, mapping: ScoreMapping) -> Self {
        self.mapping = mapping;
        self
    }

    pub fn verdicts(mut self, verdicts: MockVerdicts) -> Self {
        self.verdicts = verdicts;
        self
    }

    /// Number of sentences returned for a generation prompt.
    pub fn sentences(mut self, n: usize) -> Self {
        self.sentences = n;
        self
    }

    /// Shifts sentence k's score by `jitter * (k - 3)`, clamped to [0, 1].
    pub fn sentence_jitter(mut self, jitter: f64) -> Self {
        self.sentence_jitter = jitter;
        self
    }

    /// Answer every scoring prompt with prose instead of JSON.
    pub fn unparseable_scores(mut self, on: bool) -> Self {
        self.unparseable_scores = on;
        self
    }

    fn lookup(&self, text: &str) -> Result<&NormItem, BackendError> {
        let unknown = || BackendError::Rejected("mock cannot identify the item in the prompt".into());
        let predicate = predicate_re().captures(text).ok_or_else(unknown)?[1].to_string();
        let caps = argument_re().captures(text).ok_or_else(unknown)?;
        let argument = caps.get(1).or_else(|| caps.get(2)).ok_or_else(unknown)?.as_str().to_string();
        let candidates = self.items.get(&(predicate, argument)).ok_or_else(unknown)?;
        if candidates.len() == 1 {
            return Ok(&candidates[0]);
        }
        let role: Role = role_re()
            .captures(text)
            .and_then(|c| c[1].parse().ok())
            .ok_or_else(unknown)?;
        candidates.iter().find(|it| it.role == role).ok_or_else(unknown)
    }

    fn value_for(&self, item: &NormItem) -> f64 {
        let norm = item.normalized_rating();
        match self.mapping {
            ScoreMapping::Identity => norm,
            ScoreMapping::Antitone => 1.0 - norm,
            ScoreMapping::Noisy { amplitude } => {
                let h = CacheKey::compute(&ModelParams::default(), &[Message::user(item.item_id.clone())]);
                let byte = u8::from_str_radix(&h.as_str()[..2], 16).unwrap_or(0) as f64;
                (norm + amplitude * (byte / 127.5 - 1.0)).clamp(0.0, 1.0)
            }
        }
    }

    fn sentence_number(text: &str) -> Option<usize> {
        sentence_no_re().captures(text).and_then(|c| c[1].parse().ok())
    }

    fn reply(&self, text: &str) -> Result<String, BackendError> {
        if text.starts_with("Generate ") {
            let item = self.lookup(text)?;
            return Ok((1..=self.sentences)
                .map(|k| format!("{k}. Sentence {k}: someone will {} with the {}.", item.predicate, item.argument))
                .collect::<Vec<_>>()
                .join("\n"));
        }
        if text.contains("\"Coherent\"") {
            let k = Self::sentence_number(text).unwrap_or(1);
            let verdict = match self.verdicts {
                MockVerdicts::AllCoherent => true,
                MockVerdicts::NoneCoherent => false,
                MockVerdicts::FirstN(n) => k <= n,
                MockVerdicts::Garbled => return Ok("maybe".into()),
            };
            return Ok(format!("{{\"Coherent\": {verdict}}}"));
        }
        if text.contains("\"Score\"") {
            if self.unparseable_scores {
                return Ok("I would say it fits quite well.".into());
            }
            let item = self.lookup(text)?;
            let mut value = self.value_for(item);
            if let Some(k) = Self::sentence_number(text) {
                value = (value + self.sentence_jitter * (k as f64 - 3.0)).clamp(0.0, 1.0);
            }
            return Ok(if text.contains("'Near-Impossible'") {
                format!("{{\"Score\": \"{}\"}}", FitCategory::nearest(value).label())
            } else {
                format!("{{\"Score\": {}}}", serde_json::to_string(&value).expect("finite"))
            });
        }
        Ok(match self.lookup(text) {
            Ok(item) => format!(
                "Considering '{}' with the predicate '{}' in the {} role.",
                item.argument, item.predicate, item.role
            ),
            Err(_) => "The role is typically filled by a concrete, plausible entity.".into(),
        })
    }
}

impl Backend for NormOracleMock {
    fn send(&self, messages: &[Message], _params: &ModelParams) -> Result<BackendReply, BackendError> {
        let last = messages
            .last()
            .ok_or_else(|| BackendError::Rejected("empty history".into()))?;
        self.reply(&last.text).map(BackendReply::stop)
    }
}

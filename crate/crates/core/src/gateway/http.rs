use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Author, Backend, BackendError, BackendReply, FinishReason, Message, ModelParams};

/// Environment variables consulted for the API key, in order.
pub const API_KEY_VARS: [&str; 2] = ["THEMFIT_API_KEY", "OPENAI_API_KEY"];

/// Client for an OpenAI-compatible `POST {base_url}/chat/completions` endpoint.
#[derive(Debug)]
pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent,
        }
    }

    /// Reads the key from `THEMFIT_API_KEY`, then `OPENAI_API_KEY`.
    pub fn from_env(base_url: impl Into<String>) -> Self {
        let key = API_KEY_VARS
            .iter()
            .find_map(|v| std::env::var(v).ok().filter(|k| !k.is_empty()));
        HttpBackend::new(base_url, key)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    pub fn request_body(messages: &[Message], params: &ModelParams) -> serde_json::Value {
        let messages: Vec<_> = messages
            .iter()
            .map(|m| {
                let role = match m.author {
                    Author::System => "system",
                    Author::User => "user",
                    Author::Assistant => "assistant",
                };
                json!({ "role": role, "content": m.text })
            })
            .collect();
        json!({
            "model": params.model_name,
            "messages": messages,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        })
    }
}

impl Backend for HttpBackend {
    fn send(&self, messages: &[Message], params: &ModelParams) -> Result<BackendReply, BackendError> {
        let mut req = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(HttpBackend::request_body(messages, params))
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(BackendError::Auth(format!("HTTP {status}: {body}"))),
            408 | 429 | 500..=599 => return Err(BackendError::Transient(format!("HTTP {status}"))),
            _ => return Err(BackendError::Rejected(format!("HTTP {status}: {body}"))),
        }
        let parsed: CompletionBody = serde_json::from_str(&body)
            .map_err(|e| BackendError::Rejected(format!("malformed completion body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Rejected("completion has no choices".into()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some(_) => FinishReason::Stop,
        };
        Ok(BackendReply {
            text: choice.message.content.unwrap_or_default(),
            finish_reason,
        })
    }
}

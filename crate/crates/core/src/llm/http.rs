//! Chat-completions style HTTP provider.
//!
//! Speaks the widely implemented OpenAI-compatible JSON shape for both chat
//! and embeddings, which most hosted and local model servers accept. Images
//! are inlined as base64 data URLs. The gateway handles retries; this layer
//! only classifies failures as retryable (transport, 429, 5xx) or not.

use base64::Engine as _;
use serde::Deserialize;
use serde_json::json;

use super::{ChatMessage, LlmError, Part, ProviderReply};
use crate::config::ModelRole;

const REQUEST_TIMEOUT: std::time::Duration = std::time::Duration::from_secs(120);

pub struct HttpProvider {
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new() -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .build()
            .expect("http client builds");
        Self { client }
    }

    pub fn chat(
        &self,
        binding: &ModelRole,
        messages: &[ChatMessage],
    ) -> Result<ProviderReply, LlmError> {
        let endpoint = endpoint(binding)?;
        let body = json!({
            "model": binding.model,
            "messages": messages.iter().map(encode_message).collect::<Result<Vec<_>, _>>()?,
        });
        let response: ChatResponse = self.post(binding, endpoint, &body)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::Transport {
                message: "response contained no choices".into(),
            })?;
        if choice.finish_reason.as_deref() == Some("content_filter") {
            return Err(LlmError::Refusal {
                message: choice.message.content.unwrap_or_default(),
            });
        }
        let text = choice.message.content.unwrap_or_default();
        let usage = response.usage.unwrap_or_default();
        Ok(ProviderReply {
            input_tokens: usage
                .prompt_tokens
                .unwrap_or_else(|| whitespace_tokens(messages)),
            output_tokens: usage
                .completion_tokens
                .unwrap_or_else(|| text.split_whitespace().count() as u64),
            text,
        })
    }

    pub fn embed(
        &self,
        binding: &ModelRole,
        texts: &[String],
        dim: usize,
    ) -> Result<Vec<Vec<f32>>, LlmError> {
        let endpoint = endpoint(binding)?;
        let body = json!({
            "model": binding.model,
            "input": texts,
            "dimensions": dim,
        });
        let response: EmbedResponse = self.post(binding, endpoint, &body)?;
        if response.data.len() != texts.len() {
            return Err(LlmError::Transport {
                message: format!(
                    "expected {} embeddings, got {}",
                    texts.len(),
                    response.data.len()
                ),
            });
        }
        Ok(response.data.into_iter().map(|d| d.embedding).collect())
    }

    fn post<T: for<'de> Deserialize<'de>>(
        &self,
        binding: &ModelRole,
        endpoint: &str,
        body: &serde_json::Value,
    ) -> Result<T, LlmError> {
        let mut request = self.client.post(endpoint).json(body);
        if let Some(var) = &binding.api_key_env {
            if let Ok(key) = std::env::var(var) {
                request = request.bearer_auth(key);
            }
        }
        let response = request.send().map_err(|e| LlmError::Transport {
            message: format!("{endpoint}: {e}"),
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| LlmError::Transport {
            message: format!("{endpoint}: reading body: {e}"),
        })?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(LlmError::Transport {
                message: format!("{endpoint}: HTTP {status}: {text}"),
            });
        }
        if !status.is_success() {
            return Err(LlmError::Misconfigured {
                message: format!("{endpoint}: HTTP {status}: {text}"),
            });
        }
        serde_json::from_str(&text).map_err(|e| LlmError::Transport {
            message: format!("{endpoint}: malformed response: {e}"),
        })
    }
}

impl Default for HttpProvider {
    fn default() -> Self {
        Self::new()
    }
}

fn endpoint(binding: &ModelRole) -> Result<&str, LlmError> {
    binding
        .endpoint
        .as_deref()
        .ok_or_else(|| LlmError::Misconfigured {
            message: format!("model {} has no endpoint configured", binding.model),
        })
}

fn whitespace_tokens(messages: &[ChatMessage]) -> u64 {
    messages
        .iter()
        .map(|m| m.text().split_whitespace().count() as u64)
        .sum()
}

fn encode_message(msg: &ChatMessage) -> Result<serde_json::Value, LlmError> {
    // Single text part collapses to the plain-string form every server
    // accepts; anything else uses the structured part array.
    if let [Part::Text { text }] = msg.parts.as_slice() {
        return Ok(json!({ "role": msg.role.as_str(), "content": text }));
    }
    let mut parts = Vec::new();
    for part in &msg.parts {
        match part {
            Part::Text { text } => parts.push(json!({ "type": "text", "text": text })),
            Part::Image { path, .. } => {
                let bytes = std::fs::read(path).map_err(|e| LlmError::Transport {
                    message: format!("cannot read image {}: {e}", path.display()),
                })?;
                let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
                parts.push(json!({
                    "type": "image_url",
                    "image_url": { "url": format!("data:image/png;base64,{encoded}") },
                }));
            }
        }
    }
    Ok(json!({ "role": msg.role.as_str(), "content": parts }))
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: AssistantMessage,
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct AssistantMessage {
    content: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedRow>,
}

#[derive(Debug, Deserialize)]
struct EmbedRow {
    embedding: Vec<f32>,
}

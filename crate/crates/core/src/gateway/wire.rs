//! OpenAI-compatible chat-completions JSON. Any server that accepts
//! [`WireRequest`] and answers with [`WireResponse`] can stand behind the
//! gateway, including the fine-tuned generation server.

use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatRequest, Completion, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl From<&ChatRequest> for WireRequest {
    fn from(r: &ChatRequest) -> Self {
        WireRequest {
            model: r.model.clone(),
            messages: r.messages.clone(),
            temperature: r.temperature,
            max_tokens: r.max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireChoice {
    #[serde(default)]
    pub index: u32,
    pub message: ChatMessage,
    #[serde(default)]
    pub finish_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    pub choices: Vec<WireChoice>,
    #[serde(default)]
    pub usage: Option<Usage>,
}

impl WireResponse {
    pub fn reply(model: &str, content: impl Into<String>) -> Self {
        WireResponse {
            id: None,
            model: Some(model.to_string()),
            choices: vec![WireChoice {
                index: 0,
                message: ChatMessage::assistant(content),
                finish_reason: Some("stop".into()),
            }],
            usage: None,
        }
    }
}

/// Checks a response body against the schema the gateway consumes and
/// extracts the first choice.
pub fn validate_response(body: &[u8]) -> Result<Completion, String> {
    let resp: WireResponse =
        serde_json::from_slice(body).map_err(|e| format!("not a chat completion: {e}"))?;
    let first = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| "response has no choices".to_string())?;
    Ok(Completion {
        content: first.message.content,
        finish_reason: first.finish_reason,
        usage: resp.usage,
    })
}

pub fn validate_request(body: &[u8]) -> Result<WireRequest, String> {
    let req: WireRequest =
        serde_json::from_slice(body).map_err(|e| format!("not a chat request: {e}"))?;
    if req.messages.is_empty() {
        return Err("request has no messages".into());
    }
    Ok(req)
}

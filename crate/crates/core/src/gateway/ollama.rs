use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest};

pub const DEFAULT_ENDPOINT: &str = "http://localhost:11434";

/// Ollama-compatible HTTP backend (`POST /api/chat`, `GET /api/tags`), non-streaming.
#[derive(Debug, Clone)]
pub struct OllamaBackend {
    client: reqwest::Client,
    base_url: String,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct Options {
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_predict: Option<u32>,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    stream: bool,
    options: Options,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: String,
}

#[derive(Deserialize)]
struct ChatReply {
    message: Option<ReplyMessage>,
    /// `/api/generate`-style servers answer with a bare `response` field.
    response: Option<String>,
}

#[derive(Deserialize)]
struct TagList {
    #[serde(default)]
    models: Vec<TagEntry>,
}

#[derive(Deserialize)]
struct TagEntry {
    name: String,
}

impl OllamaBackend {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }
}

fn map_reqwest(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(e.to_string())
    }
}

#[async_trait]
impl ChatBackend for OllamaBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = ChatBody {
            model: &request.model_id,
            messages: [Message {
                role: "user",
                content: &request.prompt,
            }],
            stream: false,
            options: Options {
                temperature: request.params.temperature,
                seed: request.params.seed,
                num_predict: request.params.max_tokens,
            },
        };
        let resp = self
            .client
            .post(format!("{}/api/chat", self.base_url))
            .json(&body)
            .send()
            .await
            .map_err(map_reqwest)?;
        let status = resp.status();
        let text = resp.text().await.map_err(map_reqwest)?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let reply: ChatReply =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        reply
            .message
            .map(|m| m.content)
            .or(reply.response)
            .ok_or_else(|| BackendError::Protocol("reply has neither message nor response".into()))
    }

    async fn list_models(&self) -> Result<Vec<String>, BackendError> {
        let resp = self
            .client
            .get(format!("{}/api/tags", self.base_url))
            .send()
            .await
            .map_err(map_reqwest)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: resp.text().await.unwrap_or_default(),
            });
        }
        let tags: TagList = resp
            .json()
            .await
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        Ok(tags.models.into_iter().map(|m| m.name).collect())
    }
}

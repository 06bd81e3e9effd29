//! Client for JSON chat-completion servers (`POST <base_url><chat_path>`).

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{BackendConfig, ChatBackend, ChatReply, CompletionRequest, GatewayError};

#[derive(Debug, Serialize)]
struct ChatRequestBody<'a> {
    model: &'a str,
    messages: Vec<Message<'a>>,
    temperature: f64,
    max_tokens: u32,
    stream: bool,
}

#[derive(Debug, Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponseBody {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

pub struct HttpChatBackend {
    client: Client,
    url: String,
    model: String,
    temperature: f64,
    max_tokens: u32,
    max_retries: u32,
    backoff: Duration,
    auth: Option<(String, String)>,
}

impl HttpChatBackend {
    pub fn new(config: &BackendConfig, api_key: Option<String>) -> Result<Self, GatewayError> {
        let base = config.base_url.as_deref().ok_or_else(|| GatewayError::Config {
            backend: config.model_name.clone(),
            message: "base_url is required for http-chat".into(),
        })?;
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| GatewayError::Config {
                backend: config.model_name.clone(),
                message: e.to_string(),
            })?;
        let header = config
            .auth_header
            .clone()
            .unwrap_or_else(|| "Authorization".to_string());
        let auth = api_key.map(|key| {
            if header.eq_ignore_ascii_case("authorization") {
                (header, format!("Bearer {key}"))
            } else {
                (header, key)
            }
        });
        Ok(Self {
            client,
            url: join_url(base, &config.chat_path),
            model: config.model_name.clone(),
            temperature: config.temperature,
            max_tokens: config.max_output_tokens,
            max_retries: config.max_retries,
            backoff: Duration::from_millis(config.backoff_ms),
            auth,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn join_url(base: &str, path: &str) -> String {
    if path.is_empty() {
        return base.to_string();
    }
    format!(
        "{}/{}",
        base.trim_end_matches('/'),
        path.trim_start_matches('/')
    )
}

enum Failure {
    Transient(Option<u16>, String),
    Fatal(Option<u16>, String),
}

impl HttpChatBackend {
    fn attempt(&self, request: &CompletionRequest) -> Result<String, Failure> {
        let body = ChatRequestBody {
            model: &self.model,
            messages: vec![
                Message {
                    role: "system",
                    content: &request.system_prompt,
                },
                Message {
                    role: "user",
                    content: &request.user_prompt,
                },
            ],
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            stream: false,
        };
        let mut builder = self.client.post(&self.url).json(&body);
        if let Some((name, value)) = &self.auth {
            builder = builder.header(name.as_str(), value.as_str());
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                Failure::Transient(None, e.to_string())
            } else {
                Failure::Fatal(None, e.to_string())
            }
        })?;
        let status = response.status();
        if !status.is_success() {
            let code = Some(status.as_u16());
            let text = response.text().unwrap_or_default();
            let msg = format!("HTTP {status}: {}", truncate(&text, 300));
            return if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
                Err(Failure::Transient(code, msg))
            } else {
                Err(Failure::Fatal(code, msg))
            };
        }
        let parsed: ChatResponseBody = response
            .json()
            .map_err(|e| Failure::Fatal(Some(status.as_u16()), format!("bad response body: {e}")))?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl ChatBackend for HttpChatBackend {
    fn chat(&self, name: &str, request: &CompletionRequest) -> Result<ChatReply, GatewayError> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.attempt(request) {
                Ok(text) => {
                    return Ok(ChatReply {
                        text,
                        retries: attempts - 1,
                        attempts,
                    })
                }
                Err(Failure::Transient(status, message)) if attempts <= self.max_retries => {
                    let delay = self.backoff * 2u32.saturating_pow(attempts - 1);
                    log::warn!(
                        "{name}: attempt {attempts} failed (status {status:?}: {message}); retrying in {delay:?}"
                    );
                    std::thread::sleep(delay);
                }
                Err(Failure::Transient(status, message)) | Err(Failure::Fatal(status, message)) => {
                    return Err(GatewayError::Transport {
                        backend: name.to_string(),
                        status,
                        attempts,
                        message,
                    })
                }
            }
        }
    }
}

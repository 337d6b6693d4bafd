//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendError, ChatMessage, ChatRequest, Completer};

pub struct HttpChat {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct WireRequest<'a> {
    pub model: &'a str,
    pub messages: &'a [ChatMessage],
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_k: u32,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    #[serde(default)]
    message: Option<WireMessage>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpChat {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.retry.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: config.endpoint.clone(),
            model: config.model_name.clone(),
            api_key,
        })
    }
}

/// JSON body sent for a request.
pub fn wire_body(model: &str, request: &ChatRequest) -> serde_json::Value {
    serde_json::to_value(WireRequest {
        model,
        messages: &request.messages,
        temperature: request.params.temperature,
        max_tokens: request.params.max_new_tokens,
        top_k: request.params.top_k,
    })
    .expect("request serializes")
}

impl Completer for HttpChat {
    fn complete_once(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let transport = |e: ureq::Error| BackendError::Transport {
            attempts: 1,
            message: e.to_string(),
        };
        let mut resp = call
            .send_json(wire_body(&self.model, request))
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Http {
                status,
                body_snippet: text.chars().take(200).collect(),
                attempts: 1,
            });
        }
        let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| {
            BackendError::Transport {
                attempts: 1,
                message: format!("undecodable response body: {e}"),
            }
        })?;
        let choice = parsed.choices.into_iter().next().ok_or_else(|| {
            BackendError::Transport {
                attempts: 1,
                message: "response has no choices".into(),
            }
        })?;
        Ok(choice
            .message
            .and_then(|m| m.content)
            .or(choice.text)
            .unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{build_prompt, Dialect, GenerationParams};

    #[test]
    fn wire_body_has_chat_completions_shape() {
        let req = build_prompt(
            "BLANK left.",
            ("she", "he"),
            Dialect::WithAssistantPrefix,
            GenerationParams::default(),
        )
        .unwrap();
        let body = wire_body("phi-4", &req);
        assert_eq!(body["model"], "phi-4");
        assert_eq!(body["temperature"], 0.5);
        assert_eq!(body["max_tokens"], 6);
        assert_eq!(body["top_k"], 40);
        let msgs = body["messages"].as_array().unwrap();
        assert_eq!(msgs.len(), 3);
        assert_eq!(msgs[0]["role"], "system");
        assert_eq!(msgs[2]["role"], "assistant");
        assert!(body.get("seed").is_none());
    }

    #[test]
    fn missing_credential_env_is_config_error() {
        let cfg = BackendConfig {
            kind: crate::backend::BackendKind::HttpChat,
            api_key_env: Some("CTXAUDIT_SURELY_UNSET_VAR".into()),
            ..BackendConfig::default()
        };
        assert!(matches!(HttpChat::new(&cfg), Err(BackendError::Config(_))));
    }
}

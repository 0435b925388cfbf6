//! OpenAI-compatible chat-completions client. Never used in tests; the
//! error taxonomy (transient vs permanent) is what the gateway retries on.

use super::{Backend, BackendError, BackendOutput, ChatRequest};
use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;
use std::time::Duration;

/// Chat backend for any `/v1/chat/completions`-shaped endpoint. The API key
/// is read from the environment variable named by `api_key_env` at request
/// time and is never stored in config files.
pub struct HttpBackend {
    client: reqwest::Client,
    url: reqwest::Url,
    model: String,
    api_key_env: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Usage,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpBackend {
    /// Validates the URL up front so a bad endpoint fails at configuration
    /// time rather than mid-run.
    pub fn new(
        url: &str,
        model: impl Into<String>,
        api_key_env: Option<String>,
        timeout: Duration,
    ) -> Result<Self, String> {
        let url = reqwest::Url::parse(url).map_err(|e| format!("invalid endpoint url {url:?}: {e}"))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(format!("unsupported url scheme {:?}", url.scheme()));
        }
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| format!("http client: {e}"))?;
        Ok(HttpBackend {
            client,
            url,
            model: model.into(),
            api_key_env,
        })
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<BackendOutput, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
            "seed": request.seed,
        });
        let mut builder = self.client.post(self.url.clone()).json(&body);
        if let Some(env_name) = &self.api_key_env {
            match std::env::var(env_name) {
                Ok(key) => builder = builder.bearer_auth(key),
                Err(_) => {
                    return Err(BackendError::Permanent(format!(
                        "api key environment variable {env_name} is not set"
                    )))
                }
            }
        }
        let response = builder.send().await.map_err(|e| {
            // Connection failures and timeouts are worth retrying.
            BackendError::Transient(format!("request failed: {e}"))
        })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("http {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Permanent(format!("http {status}")));
        }
        let parsed: ChatResponse = response
            .json()
            .await
            .map_err(|e| BackendError::Permanent(format!("malformed response body: {e}")))?;
        let text = parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| BackendError::Permanent("response has no choices".into()))?;
        Ok(BackendOutput {
            text,
            prompt_tokens: parsed.usage.prompt_tokens,
            completion_tokens: parsed.usage.completion_tokens,
        })
    }

    fn name(&self) -> &str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_malformed_url_at_construction() {
        assert!(HttpBackend::new("not a url", "m", None, Duration::from_secs(1)).is_err());
        assert!(HttpBackend::new("ftp://host/x", "m", None, Duration::from_secs(1)).is_err());
        assert!(HttpBackend::new(
            "http://localhost:9/v1/chat/completions",
            "m",
            None,
            Duration::from_secs(1)
        )
        .is_ok());
    }
}

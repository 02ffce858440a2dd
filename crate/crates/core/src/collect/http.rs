use std::collections::BTreeMap;

use reqwest::Client;

use super::driver::{CellRequest, ChatEndpoint};
use super::protocol::{ChatMessage, ChatRequest, ChatResponse, META_QUERY_ID, META_SAMPLE_INDEX};
use super::{EndpointConfig, EndpointError};

/// Chat-completion endpoint reached over HTTP.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    config: EndpointConfig,
    url: String,
    api_key: Option<String>,
    client: Client,
}

impl HttpEndpoint {
    pub fn new(config: EndpointConfig) -> Result<Self, EndpointError> {
        let client = Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let url = format!(
            "{}/{}",
            config.base_url.trim_end_matches('/'),
            config.path.trim_start_matches('/')
        );
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        Ok(Self {
            config,
            url,
            api_key,
            client,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn body(&self, req: &CellRequest<'_>) -> ChatRequest {
        let metadata = self.config.send_metadata.then(|| {
            BTreeMap::from([
                (META_QUERY_ID.to_string(), req.query_id.to_string()),
                (META_SAMPLE_INDEX.to_string(), req.sample_index.to_string()),
            ])
        });
        ChatRequest {
            model: self.config.model_id.clone(),
            messages: vec![ChatMessage {
                role: "user".to_string(),
                content: req.prompt.to_string(),
            }],
            temperature: req.temperature,
            max_tokens: Some(self.config.max_tokens),
            metadata,
        }
    }
}

impl ChatEndpoint for HttpEndpoint {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn advertised_temperature(&self) -> f64 {
        self.config.temperature
    }

    async fn complete(&self, req: &CellRequest<'_>) -> Result<String, EndpointError> {
        let mut builder = self.client.post(&self.url).json(&self.body(req));
        if let Some(key) = &self.api_key {
            let value = if self.config.auth_header.eq_ignore_ascii_case("authorization") {
                format!("Bearer {key}")
            } else {
                key.clone()
            };
            builder = builder.header(self.config.auth_header.as_str(), value);
        }
        let resp = builder.send().await.map_err(|e| {
            if e.is_timeout() {
                EndpointError::Timeout
            } else {
                EndpointError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(EndpointError::Status {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).chars().take(512).collect(),
            });
        }
        let parsed: ChatResponse =
            serde_json::from_slice(&bytes).map_err(|e| EndpointError::Protocol(e.to_string()))?;
        parsed
            .content()
            .map(str::to_string)
            .ok_or_else(|| EndpointError::Protocol("response has no choices".to_string()))
    }
}

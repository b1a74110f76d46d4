//! HTTP backends: OpenAI-compatible chat and embedding endpoints, and the
//! NLP sidecar's `/tag` and `/embed` routes.

use std::sync::Arc;
use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    BackendError, ChatBackend, ChatClient, ChatRequest, EmbedBackend, EmbedClient, Gateway, GatewayConfig,
    GatewayError, PosTag, PosTaggerClient, ResponseFormat, TagBackend,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// `POST {endpoint}/chat/completions` with OpenAI message schema.
    OpenaiChat,
    /// `POST {endpoint}/embeddings` with OpenAI embedding schema.
    OpenaiEmbeddings,
    /// `POST {endpoint}/embed` on the NLP sidecar.
    SidecarEmbed,
    /// `POST {endpoint}/tag` on the NLP sidecar.
    SidecarTag,
}

impl ProviderKind {
    fn default_path(self) -> &'static str {
        match self {
            ProviderKind::OpenaiChat => "/chat/completions",
            ProviderKind::OpenaiEmbeddings => "/embeddings",
            ProviderKind::SidecarEmbed => "/embed",
            ProviderKind::SidecarTag => "/tag",
        }
    }
}

/// One configured model service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderProfile {
    pub kind: ProviderKind,
    #[serde(flatten)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default = "default_auth_scheme")]
    pub auth_scheme: String,
    /// Environment variable that overrides `api_key` when set.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
}

fn default_auth_header() -> String {
    "Authorization".into()
}
fn default_auth_scheme() -> String {
    "Bearer".into()
}
fn default_max_batch() -> usize {
    64
}

impl ProviderProfile {
    pub fn new(kind: ProviderKind, endpoint_url: &str) -> Self {
        Self {
            kind,
            gateway: GatewayConfig { endpoint_url: endpoint_url.to_string(), ..GatewayConfig::default() },
            path: None,
            model: None,
            auth_header: default_auth_header(),
            auth_scheme: default_auth_scheme(),
            api_key_env: None,
            max_batch: default_max_batch(),
        }
    }

    pub fn url(&self) -> String {
        let base = self.gateway.endpoint_url.trim_end_matches('/');
        let path = self.path.as_deref().unwrap_or(self.kind.default_path());
        format!("{base}/{}", path.trim_start_matches('/'))
    }

    pub fn api_key(&self) -> Option<String> {
        self.api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty())
            .or_else(|| self.gateway.api_key.clone())
    }

    fn validate(&self) -> Result<(), GatewayError> {
        self.gateway.validate()?;
        if self.gateway.endpoint_url.is_empty() {
            return Err(GatewayError::InvalidRequest("endpoint_url is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct HttpTransport {
    client: Client,
    url: String,
    auth: Option<(String, String)>,
}

impl HttpTransport {
    fn new(profile: &ProviderProfile) -> Result<Self, GatewayError> {
        profile.validate()?;
        let client = Client::builder()
            .timeout(Duration::from_millis(profile.gateway.timeout_ms))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let auth = profile.api_key().map(|key| {
            let value = if profile.auth_scheme.is_empty() { key } else { format!("{} {key}", profile.auth_scheme) };
            (profile.auth_header.clone(), value)
        });
        Ok(Self { client, url: profile.url(), auth })
    }

    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let mut req: RequestBuilder = self.client.post(&self.url).json(body);
        if let Some((name, value)) = &self.auth {
            req = req.header(name.as_str(), value.as_str());
        }
        let resp: Response = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Err(BackendError::RateLimited);
        }
        if status.is_server_error() {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::Fatal(format!("HTTP {status}: {}", text.trim())));
        }
        resp.json::<Value>().map_err(|e| BackendError::Transport(format!("invalid JSON body: {e}")))
    }
}

pub struct HttpChat {
    http: HttpTransport,
    model: Option<String>,
}

impl HttpChat {
    pub fn new(profile: &ProviderProfile) -> Result<Self, GatewayError> {
        Ok(Self { http: HttpTransport::new(profile)?, model: profile.model.clone() })
    }
}

impl ChatBackend for HttpChat {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let mut body = json!({
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        if let Some(model) = &self.model {
            body["model"] = json!(model);
        }
        if req.response_format == ResponseFormat::JsonObject {
            body["response_format"] = json!({"type": "json_object"});
        }
        let value = self.http.post(&body)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Transport("response lacks choices[0].message.content".into()))
    }
}

pub struct HttpEmbed {
    http: HttpTransport,
    kind: ProviderKind,
    model: Option<String>,
    id: String,
}

impl HttpEmbed {
    pub fn new(profile: &ProviderProfile) -> Result<Self, GatewayError> {
        let id = profile.model.clone().unwrap_or_else(|| profile.url());
        Ok(Self { http: HttpTransport::new(profile)?, kind: profile.kind, model: profile.model.clone(), id })
    }
}

/// Request body of the sidecar `POST /embed` route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

/// Response body of the sidecar `POST /embed` route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f32>>,
    pub model_id: String,
}

/// Request body of the sidecar `POST /tag` route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRequest {
    pub tokens: Vec<String>,
}

/// Response body of the sidecar `POST /tag` route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagResponse {
    pub tags: Vec<PosTag>,
}

#[derive(Deserialize)]
struct OpenAiEmbedding {
    index: usize,
    embedding: Vec<f32>,
}

impl EmbedBackend for HttpEmbed {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        match self.kind {
            ProviderKind::SidecarEmbed => {
                let body = serde_json::to_value(EmbedRequest { texts: texts.to_vec() }).expect("serializable");
                let resp: EmbedResponse = serde_json::from_value(self.http.post(&body)?)
                    .map_err(|e| BackendError::Transport(format!("bad /embed response: {e}")))?;
                Ok(resp.vectors)
            }
            _ => {
                let mut body = json!({ "input": texts });
                if let Some(model) = &self.model {
                    body["model"] = json!(model);
                }
                let value = self.http.post(&body)?;
                let data =
                    value.get("data").cloned().ok_or_else(|| BackendError::Transport("response lacks data".into()))?;
                let mut items: Vec<OpenAiEmbedding> = serde_json::from_value(data)
                    .map_err(|e| BackendError::Transport(format!("bad embeddings response: {e}")))?;
                items.sort_by_key(|e| e.index);
                Ok(items.into_iter().map(|e| e.embedding).collect())
            }
        }
    }
}

pub struct HttpTagger {
    http: HttpTransport,
}

impl HttpTagger {
    pub fn new(profile: &ProviderProfile) -> Result<Self, GatewayError> {
        Ok(Self { http: HttpTransport::new(profile)? })
    }
}

impl TagBackend for HttpTagger {
    fn tag(&self, tokens: &[String]) -> Result<Vec<PosTag>, BackendError> {
        let body = serde_json::to_value(TagRequest { tokens: tokens.to_vec() }).expect("serializable");
        let resp: TagResponse = serde_json::from_value(self.http.post(&body)?)
            .map_err(|e| BackendError::Transport(format!("bad /tag response: {e}")))?;
        Ok(resp.tags)
    }
}

impl Gateway {
    /// Builds a networked gateway. Without a tagger profile the heuristic
    /// tagger is used.
    pub fn from_profiles(
        chat: &ProviderProfile,
        embed: &ProviderProfile,
        tagger: Option<&ProviderProfile>,
    ) -> Result<Self, GatewayError> {
        if chat.kind != ProviderKind::OpenaiChat {
            return Err(GatewayError::InvalidRequest("chat profile must be openai_chat".into()));
        }
        if !matches!(embed.kind, ProviderKind::OpenaiEmbeddings | ProviderKind::SidecarEmbed) {
            return Err(GatewayError::InvalidRequest("embed profile has wrong kind".into()));
        }
        let tagger = match tagger {
            None => PosTaggerClient::heuristic(),
            Some(p) if p.kind == ProviderKind::SidecarTag => {
                PosTaggerClient::with_sidecar(Arc::new(HttpTagger::new(p)?), p.gateway.policy())
            }
            Some(_) => return Err(GatewayError::InvalidRequest("tagger profile must be sidecar_tag".into())),
        };
        Ok(Self {
            chat: ChatClient::new(Arc::new(HttpChat::new(chat)?), chat.gateway.policy(), chat.gateway.max_concurrent),
            embed: EmbedClient::new(
                Arc::new(HttpEmbed::new(embed)?),
                embed.gateway.policy(),
                embed.gateway.max_concurrent,
                embed.max_batch,
            ),
            tagger,
        })
    }
}

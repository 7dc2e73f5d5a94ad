//! HTTP clients for a hosted language model and an open-vocabulary detector.
//!
//! Both are blocking and belong off the simulation tick thread.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};
use travnav_core::grounding::{DetectorClient, EncodedImage};
use travnav_core::instruction::{ModelClient, TransportError};

pub const MODEL_ENDPOINT: &str = "MODEL_ENDPOINT";
pub const MODEL_API_KEY: &str = "MODEL_API_KEY";
pub const MODEL_NAME: &str = "MODEL_NAME";
pub const DETECTOR_ENDPOINT: &str = "DETECTOR_ENDPOINT";
pub const DETECTOR_API_KEY: &str = "DETECTOR_API_KEY";

const DEFAULT_MODEL: &str = "gpt-3.5-turbo";
const TIMEOUT: Duration = Duration::from_secs(30);

fn env_nonempty(key: &str) -> Option<String> {
    std::env::var(key).ok().filter(|v| !v.trim().is_empty())
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(TIMEOUT))
        .http_status_as_error(false)
        .build()
        .into()
}

fn post_json(
    agent: &ureq::Agent,
    url: &str,
    key: Option<&str>,
    body: &Value,
) -> Result<String, TransportError> {
    let mut req = agent.post(url);
    if let Some(key) = key {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req
        .send_json(body)
        .map_err(|e| TransportError(e.to_string()))?;
    let status = resp.status();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| TransportError(e.to_string()))?;
    if !status.is_success() {
        return Err(TransportError(format!("HTTP {status}: {text}")));
    }
    Ok(text)
}

/// Chat-completions style model endpoint.
///
/// Sends `{"model", "messages": [{"role": "user", "content": prompt}],
/// "temperature": 0}` and reads `choices[0].message.content`. Bodies that
/// are not JSON, or JSON with a top-level `text`/`content` string, are also
/// accepted so simple proxies work.
pub struct HttpModelClient {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpModelClient {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        model: Option<String>,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            model: model.unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            agent: agent(),
        }
    }

    /// `None` when `MODEL_ENDPOINT` is unset.
    pub fn from_env() -> Option<Self> {
        let endpoint = env_nonempty(MODEL_ENDPOINT)?;
        Some(Self::new(
            endpoint,
            env_nonempty(MODEL_API_KEY),
            env_nonempty(MODEL_NAME),
        ))
    }
}

/// Pulls the completion text out of a model response body.
pub fn completion_text(body: &str) -> String {
    let Ok(v) = serde_json::from_str::<Value>(body) else {
        return body.to_string();
    };
    let candidates = [
        v.pointer("/choices/0/message/content"),
        v.pointer("/choices/0/text"),
        v.get("text"),
        v.get("content"),
    ];
    let text = candidates
        .into_iter()
        .flatten()
        .find_map(Value::as_str)
        .map(str::to_string);
    text.unwrap_or_else(|| body.to_string())
}

impl ModelClient for HttpModelClient {
    fn complete(&self, prompt: &str) -> Result<String, TransportError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        post_json(&self.agent, &self.endpoint, self.api_key.as_deref(), &body)
            .map(|b| completion_text(&b))
    }
}

/// Detector endpoint taking `{"prompt", "image" (base64), "width",
/// "height"}` and answering `{"detections": [{"label", "box": [cx, cy, w,
/// h]}], "normalized"?}`; the raw body goes to the core decoder.
pub struct HttpDetectorClient {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpDetectorClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            agent: agent(),
        }
    }

    /// `None` when `DETECTOR_ENDPOINT` is unset.
    pub fn from_env() -> Option<Self> {
        let endpoint = env_nonempty(DETECTOR_ENDPOINT)?;
        Some(Self::new(endpoint, env_nonempty(DETECTOR_API_KEY)))
    }
}

impl DetectorClient for HttpDetectorClient {
    fn detect(&self, image: &EncodedImage, prompt: &str) -> Result<String, TransportError> {
        let body = json!({
            "prompt": prompt,
            "image": base64::engine::general_purpose::STANDARD.encode(&image.bytes),
            "width": image.width,
            "height": image.height,
        });
        post_json(&self.agent, &self.endpoint, self.api_key.as_deref(), &body)
    }
}

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendError, BackendSpec, ChatBackend, ChatRequest};

/// JSON body for an OpenAI-style chat-completion endpoint.
pub fn http_request_body(model: Option<&str>, req: &ChatRequest) -> Value {
    let mut body = json!({
        "messages": req.messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    });
    if let Some(m) = model {
        body["model"] = Value::String(m.to_string());
    }
    body
}

/// Live chat-completion client. The bearer token is read from the
/// environment variable named in the spec when the backend is built.
pub struct HttpBackend {
    endpoint: String,
    model: Option<String>,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn from_spec(spec: &BackendSpec) -> Result<Self, BackendError> {
        let endpoint = spec
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config(format!("{}: missing endpoint", spec.name)))?;
        let api_key = match &spec.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("{}: environment variable {var} is not set", spec.name))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(spec.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            endpoint,
            model: spec.model.clone(),
            api_key,
            agent,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let body = http_request_body(self.model.as_deref(), req).to_string();
        let mut call = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = call
            .send(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let code = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(BackendError::Status { code, body: text });
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                BackendError::InvalidResponse("missing choices[0].message.content".into())
            })
    }
}

//! Chat-completions backend over HTTP.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, BackendRequest};

pub const BASE_URL_ENV: &str = "IACT_LLM_BASE_URL";
pub const MODEL_ENV: &str = "IACT_LLM_MODEL";
pub const API_KEY_ENV: &str = "IACT_LLM_API_KEY";
const ATTEMPTS: u32 = 3;
const FIRST_BACKOFF: Duration = Duration::from_millis(500);

pub struct HttpBackend {
    base_url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    backoff: Duration,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        HttpBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(300)).build(),
            backoff: FIRST_BACKOFF,
        }
    }

    /// Reads base URL, model and credential from the environment.
    pub fn from_env() -> Result<Self, String> {
        let base = std::env::var(BASE_URL_ENV).map_err(|_| format!("{BASE_URL_ENV} is not set"))?;
        let model = std::env::var(MODEL_ENV).map_err(|_| format!("{MODEL_ENV} is not set"))?;
        Ok(HttpBackend::new(base, model, std::env::var(API_KEY_ENV).ok()))
    }

    pub fn with_backoff(mut self, first: Duration) -> Self {
        self.backoff = first;
        self
    }

    pub fn body(&self, req: &BackendRequest) -> Value {
        let messages: Vec<Value> = req
            .messages
            .iter()
            .map(|m| json!({"role": m.role, "content": m.text}))
            .collect();
        json!({
            "model": self.model,
            "messages": messages,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        })
    }

    fn attempt(&self, body: &Value) -> Result<String, (BackendError, bool)> {
        let mut call = self
            .agent
            .post(&format!("{}/chat/completions", self.base_url))
            .set("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {k}"));
        }
        match call.send_json(body) {
            Ok(resp) => {
                let v: Value = resp
                    .into_json()
                    .map_err(|e| (BackendError::BadResponse(e.to_string()), false))?;
                v.pointer("/choices/0/message/content")
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| {
                        (
                            BackendError::BadResponse("missing choices[0].message.content".into()),
                            false,
                        )
                    })
            }
            Err(ureq::Error::Status(status, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let retry = status == 429 || status >= 500;
                Err((BackendError::Http { status, body: text }, retry))
            }
            Err(ureq::Error::Transport(t)) => Err((BackendError::Transport(t.to_string()), true)),
        }
    }
}

impl Backend for HttpBackend {
    fn complete(&mut self, request: &BackendRequest) -> Result<String, BackendError> {
        if request.messages.is_empty() {
            return Err(BackendError::EmptyRequest);
        }
        let body = self.body(request);
        let mut delay = self.backoff;
        let mut last = BackendError::Transport("no attempt made".into());
        for attempt in 0..ATTEMPTS {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((e, retry)) => {
                    last = e;
                    if !retry || attempt + 1 == ATTEMPTS {
                        break;
                    }
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
        Err(last)
    }
}

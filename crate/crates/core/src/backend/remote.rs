use std::io::ErrorKind;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest, BackendResponse};

/// Body POSTed to `{endpoint}/infer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferWireRequest {
    pub frames: Vec<String>,
    pub prompt: String,
    pub max_new_tokens: u32,
}

/// Body expected back from `{endpoint}/infer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferWireResponse {
    pub text: String,
    pub tokens_generated: u32,
    pub infer_ms: f64,
}

impl InferWireResponse {
    /// Strict schema check: all three fields present with the right types,
    /// `infer_ms` finite and nonnegative.
    pub fn parse(body: &str) -> Result<Self, BackendError> {
        let resp: InferWireResponse =
            serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        if !resp.infer_ms.is_finite() || resp.infer_ms < 0.0 {
            return Err(BackendError::MalformedResponse(format!(
                "infer_ms must be a nonnegative number, got {}",
                resp.infer_ms
            )));
        }
        Ok(resp)
    }
}

/// HTTP client for a live inference server.
pub struct RemoteBackend {
    id: String,
    base: String,
    url: String,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let base = endpoint.trim_end_matches('/');
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend {
            id: format!("remote:{base}"),
            url: format!("{base}/infer"),
            base: base.to_string(),
            agent,
        }
    }

    /// Checks that something answers HTTP at the endpoint. Any status code
    /// counts as reachable; only connection-level failures are errors.
    pub fn probe(&self) -> Result<(), BackendError> {
        match self.agent.get(format!("{}/health", self.base)).call() {
            Ok(_) => Ok(()),
            Err(e) => match map_transport(e) {
                BackendError::Transport(detail) => Err(BackendError::Unavailable(detail)),
                other => Err(other),
            },
        }
    }

    pub fn wire_request(req: &BackendRequest) -> InferWireRequest {
        InferWireRequest {
            frames: req
                .window
                .frames
                .iter()
                .map(|f| f.uri.clone().unwrap_or_default())
                .collect(),
            prompt: req.prompt.text.clone(),
            max_new_tokens: req.prompt.max_new_tokens,
        }
    }
}

fn map_transport(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Timeout(t) => BackendError::Unavailable(format!("timed out ({t})")),
        ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => BackendError::Unavailable(err.to_string()),
        ureq::Error::Io(ref io)
            if matches!(
                io.kind(),
                ErrorKind::ConnectionRefused | ErrorKind::ConnectionReset | ErrorKind::TimedOut
            ) =>
        {
            BackendError::Unavailable(err.to_string())
        }
        ureq::Error::StatusCode(code) if code >= 500 => BackendError::Unavailable(format!("HTTP {code}")),
        other => BackendError::Transport(other.to_string()),
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn infer(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json")
            .send_json(Self::wire_request(req))
            .map_err(map_transport)?;
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(BackendError::Unavailable(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        let body = resp.body_mut().read_to_string().map_err(map_transport)?;
        let wire = InferWireResponse::parse(&body)?;
        Ok(BackendResponse {
            raw_text: wire.text,
            tokens_generated: wire.tokens_generated,
            infer: Duration::from_secs_f64(wire.infer_ms / 1000.0),
            backend_id: self.id.clone(),
            profile: None,
        })
    }
}

//! The model oracle behind a single `infer` call.
//!
//! Three implementations share the [`Backend`] trait:
//! - [`ReplayBackend`] returns outputs recorded in a prediction log,
//! - [`StochasticBackend`] simulates a quantization profile's error and
//!   latency statistics,
//! - [`RemoteBackend`] talks JSON over HTTP to a live inference server.
//!
//! Backends never enforce the deadline themselves; the orchestrator's watchdog
//! does.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Window;
use crate::prompting::PromptSpec;
use crate::time;

mod profile;
mod remote;
mod replay;
mod stochastic;

pub use profile::{Modality, ProfileCounts, ProfileError, QuantProfile, Quantization, BUILTIN_PROFILES};
pub use remote::{InferWireRequest, InferWireResponse, RemoteBackend};
pub use replay::ReplayBackend;
pub use stochastic::StochasticBackend;

#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub window: Window,
    pub prompt: PromptSpec,
    /// Watchdog budget for this call.
    pub deadline: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub raw_text: String,
    pub tokens_generated: u32,
    #[serde(rename = "infer_s", with = "time::serde_secs")]
    pub infer: Duration,
    pub backend_id: String,
    pub profile: Option<String>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("no recorded output for window {clip_id}#{window_index}")]
    MissingRecord { clip_id: String, window_index: u64 },
    #[error("window {clip_id}#{window_index} has no ground-truth label to simulate from")]
    MissingLabel { clip_id: String, window_index: u64 },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Unavailable(_) | BackendError::Transport(_))
    }
}

/// A model oracle mapping a window of frames plus a prompt to raw text.
///
/// Implementations must tolerate concurrent calls from several threads and
/// must not hold caller-visible mutable state.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    /// Name of the quantization profile this backend represents, if any.
    fn profile(&self) -> Option<String> {
        None
    }

    fn infer(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn profile(&self) -> Option<String> {
        (**self).profile()
    }

    fn infer(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).infer(req)
    }
}

/// Rough token count for text a simulated backend emits (about four bytes
/// per token, at least one token for nonempty text).
pub fn estimate_tokens(text: &str) -> u32 {
    text.len().div_ceil(4) as u32
}

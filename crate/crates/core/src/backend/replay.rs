use std::collections::HashMap;

use super::{Backend, BackendError, BackendRequest, BackendResponse};
use crate::orchestrator::log::PredictionRecord;

/// Serves the outputs recorded in a prediction log, keyed by
/// `(clip_id, window_index)`.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: HashMap<(String, u64), BackendResponse>,
}

impl ReplayBackend {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> Self {
        let responses = records
            .into_iter()
            .map(|r| {
                let resp = BackendResponse {
                    raw_text: r.raw_text.clone(),
                    tokens_generated: r.tokens_generated,
                    infer: r.infer,
                    backend_id: r.backend_id.clone(),
                    profile: r.profile.clone(),
                };
                ((r.clip_id.clone(), r.window_index), resp)
            })
            .collect();
        ReplayBackend { responses }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn infer(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let key = (req.window.clip_id.clone(), req.window.window_index);
        self.responses.get(&key).cloned().ok_or(BackendError::MissingRecord {
            clip_id: key.0,
            window_index: key.1,
        })
    }
}

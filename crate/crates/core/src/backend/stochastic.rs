use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{estimate_tokens, Backend, BackendError, BackendRequest, BackendResponse, QuantProfile};
use crate::ingest::Label;

/// Simulates a quantization profile. Each window gets its own PRNG stream
/// keyed by `(seed, clip_id, window_index)`, so outcomes do not depend on the
/// order or parallelism in which windows are evaluated.
#[derive(Debug, Clone)]
pub struct StochasticBackend {
    id: String,
    profile: QuantProfile,
    seed: u64,
}

impl StochasticBackend {
    pub fn new(profile: QuantProfile, seed: u64) -> Self {
        StochasticBackend {
            id: format!("stochastic:{}", profile.label()),
            profile,
            seed,
        }
    }

    pub fn quant_profile(&self) -> &QuantProfile {
        &self.profile
    }

    fn window_rng(&self, clip_id: &str, window_index: u64) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((clip_id.len() as u64).to_le_bytes());
        hasher.update(clip_id.as_bytes());
        hasher.update(window_index.to_le_bytes());
        ChaCha8Rng::from_seed(hasher.finalize().into())
    }

    fn draw_latency(&self, rng: &mut ChaCha8Rng) -> Duration {
        let mean = self.profile.mean_latency.as_nanos() as i128;
        let jitter = self.profile.latency_jitter.as_nanos() as i128;
        let u: f64 = rng.random();
        let offset = ((2.0 * u - 1.0) * jitter as f64).round() as i128;
        Duration::from_nanos((mean + offset).max(0) as u64)
    }
}

impl Backend for StochasticBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn profile(&self) -> Option<String> {
        Some(self.profile.label())
    }

    fn infer(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let window = &req.window;
        let label = window.label.ok_or_else(|| BackendError::MissingLabel {
            clip_id: window.clip_id.clone(),
            window_index: window.window_index,
        })?;
        let mut rng = self.window_rng(&window.clip_id, window.window_index);
        let u: f64 = rng.random();
        let answer = match label {
            Label::Anomaly if u < self.profile.tpr => "Anomaly",
            Label::Anomaly if u < self.profile.tpr + self.profile.unknown_rate => "Unknown",
            Label::Anomaly => "Normal",
            Label::Normal if u < self.profile.fpr => "Anomaly",
            Label::Normal => "Normal",
        };
        let infer = self.draw_latency(&mut rng);
        let raw_text = req.prompt.format_answer(answer, None);
        let tokens_generated = estimate_tokens(&raw_text).min(req.prompt.max_new_tokens);
        Ok(BackendResponse {
            raw_text,
            tokens_generated,
            infer,
            backend_id: self.id.clone(),
            profile: Some(self.profile.label()),
        })
    }
}

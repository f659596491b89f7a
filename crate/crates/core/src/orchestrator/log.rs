//! Append-only JSONL logs: one prediction record per decision, one handoff
//! record per trigger. Every record carries the provenance of the run that
//! produced it.

use std::io::{BufRead, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::debounce::HandoffEvent;
use super::ObserverDecision;
use crate::ingest::{Label, WindowId};
use crate::prompting::DecisionClass;
use crate::time;

/// Identifies the run an artifact came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub prompt_hash: String,
    pub seed: u64,
    pub n_min: u32,
    #[serde(with = "time::serde_secs")]
    pub deadline_s: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub clip_id: String,
    pub window_index: u64,
    pub gt: Option<Label>,
    pub decision: DecisionClass,
    pub z: u8,
    pub raw_text: String,
    pub tokens_generated: u32,
    #[serde(rename = "sense_s", with = "time::serde_secs")]
    pub sense: Duration,
    #[serde(rename = "preprocess_s", with = "time::serde_secs")]
    pub preprocess: Duration,
    #[serde(rename = "infer_s", with = "time::serde_secs")]
    pub infer: Duration,
    #[serde(rename = "post_s", with = "time::serde_secs")]
    pub post: Duration,
    #[serde(rename = "total_s", with = "time::serde_secs")]
    pub total: Duration,
    pub deadline_violated: bool,
    pub prompt_hash: String,
    pub backend_id: String,
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_min: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_s: Option<f64>,
}

impl PredictionRecord {
    pub fn from_decision(d: &ObserverDecision, prov: &Provenance) -> Self {
        let (raw_text, tokens_generated, backend_id, profile) = match &d.response {
            Some(r) => (r.raw_text.clone(), r.tokens_generated, r.backend_id.clone(), r.profile.clone()),
            None => (String::new(), 0, d.backend_id.clone(), d.profile.clone()),
        };
        PredictionRecord {
            clip_id: d.window.clip_id.clone(),
            window_index: d.window.window_index,
            gt: d.gt,
            decision: d.decision_class,
            z: d.z,
            raw_text,
            tokens_generated,
            sense: d.latency.sense,
            preprocess: d.latency.preprocess,
            infer: d.latency.infer,
            post: d.latency.post,
            total: d.latency.total,
            deadline_violated: d.deadline_violated,
            prompt_hash: prov.prompt_hash.clone(),
            backend_id,
            profile,
            tool_version: Some(prov.tool_version.clone()),
            config_hash: Some(prov.config_hash.clone()),
            seed: Some(prov.seed),
            n_min: Some(prov.n_min),
            deadline_s: Some(prov.deadline_s.as_secs_f64()),
        }
    }

    pub fn window_id(&self) -> WindowId {
        WindowId {
            clip_id: self.clip_id.clone(),
            window_index: self.window_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoffRecord {
    pub trigger_time_s: f64,
    pub windows: Vec<WindowId>,
    pub explanations: Vec<String>,
    pub total_s: f64,
    pub tool_version: String,
    pub config_hash: String,
    pub prompt_hash: String,
    pub seed: u64,
}

impl HandoffRecord {
    pub fn from_event(ev: &HandoffEvent, prov: &Provenance) -> Self {
        HandoffRecord {
            trigger_time_s: ev.trigger_time.as_secs_f64(),
            windows: ev.windows.clone(),
            explanations: ev.explanations.clone(),
            total_s: ev.latency_of_last.total.as_secs_f64(),
            tool_version: prov.tool_version.clone(),
            config_hash: prov.config_hash.clone(),
            prompt_hash: prov.prompt_hash.clone(),
            seed: prov.seed,
        }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("bad log record at line {line_no}: {detail}")]
    BadRecord { line_no: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(input: R) -> Result<Vec<T>, LogError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LogError::BadRecord {
            line_no: i + 1,
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_prediction_log<R: BufRead>(input: R) -> Result<Vec<PredictionRecord>, LogError> {
    read_jsonl(input)
}

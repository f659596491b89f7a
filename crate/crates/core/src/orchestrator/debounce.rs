//! Debounced handoff state machine.
//!
//! `NOMINAL -> CANDIDATE` on the first positive, back to `NOMINAL` on any
//! non-positive, `TRIGGERED` once `n_min` consecutive windows were positive.
//! `TRIGGERED` latches until [`reset`]; [`acknowledge`] moves it to
//! `HANDOFF_ACKED`, which also latches.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::latency::LatencyBreakdown;
use super::ObserverDecision;
use crate::ingest::WindowId;
use crate::time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Nominal,
    Candidate,
    Triggered,
    HandoffAcked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Positive {
    window: WindowId,
    explanation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DebounceState {
    n_min: u32,
    phase: Phase,
    run: Vec<Positive>,
    last_window: Option<WindowId>,
}

/// Fail-safe handoff request: the `n_min` positive windows that caused it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoffEvent {
    #[serde(rename = "trigger_time_s", with = "time::serde_secs")]
    pub trigger_time: Duration,
    pub windows: Vec<WindowId>,
    pub explanations: Vec<String>,
    pub latency_of_last: LatencyBreakdown,
}

impl DebounceState {
    /// # Panics
    /// If `n_min` is zero.
    pub fn new(n_min: u32) -> Self {
        assert!(n_min >= 1, "n_min must be positive");
        DebounceState {
            n_min,
            phase: Phase::Nominal,
            run: Vec::new(),
            last_window: None,
        }
    }

    pub fn n_min(&self) -> u32 {
        self.n_min
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn consecutive_positives(&self) -> u32 {
        self.run.len() as u32
    }

    fn follows_last(&self, id: &WindowId) -> bool {
        match &self.last_window {
            None => true,
            Some(last) => last.clip_id == id.clip_id && last.window_index + 1 == id.window_index,
        }
    }

    /// Feeds one decision. A window that does not directly follow the
    /// previous one (gap from a dropped window, or another clip) restarts the
    /// positive run.
    pub fn step(mut self, decision: &ObserverDecision) -> (Self, Option<HandoffEvent>) {
        if matches!(self.phase, Phase::Triggered | Phase::HandoffAcked) {
            self.last_window = Some(decision.window.clone());
            return (self, None);
        }
        if !self.follows_last(&decision.window) {
            self.run.clear();
            self.phase = Phase::Nominal;
        }
        self.last_window = Some(decision.window.clone());

        if decision.z == 0 {
            self.run.clear();
            self.phase = Phase::Nominal;
            return (self, None);
        }

        self.run.push(Positive {
            window: decision.window.clone(),
            explanation: decision.verdict.as_ref().and_then(|v| v.think_text.clone()),
        });
        if self.run.len() as u32 >= self.n_min {
            self.phase = Phase::Triggered;
            let event = HandoffEvent {
                trigger_time: decision.decided_at,
                windows: self.run.iter().map(|p| p.window.clone()).collect(),
                explanations: self.run.iter().filter_map(|p| p.explanation.clone()).collect(),
                latency_of_last: decision.latency,
            };
            (self, Some(event))
        } else {
            self.phase = Phase::Candidate;
            (self, None)
        }
    }
}

pub fn step(state: DebounceState, decision: &ObserverDecision) -> (DebounceState, Option<HandoffEvent>) {
    state.step(decision)
}

/// Re-arms the observer: back to `NOMINAL` with a zero counter.
pub fn reset(state: DebounceState) -> DebounceState {
    DebounceState::new(state.n_min)
}

/// The fail-safe stack confirmed the handoff. No-op outside `TRIGGERED`.
pub fn acknowledge(mut state: DebounceState) -> DebounceState {
    if state.phase == Phase::Triggered {
        state.phase = Phase::HandoffAcked;
    }
    state
}

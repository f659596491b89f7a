//! The observer loop.
//!
//! Each clip is an episode with its own clock starting at zero and a fresh
//! debounce state. Within an episode the observer ticks at `rate_hz`; on each
//! tick it takes the newest window whose frames are complete and drops any
//! older pending ones (latest-window-wins). One backend call is in flight at a
//! time. The watchdog turns any call that has not answered by `deadline_s`
//! into a `TimedOut` decision with `z = 0`.

pub mod clock;
pub mod debounce;
pub mod latency;
pub mod log;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{Backend, BackendError, BackendRequest, BackendResponse};
use crate::ingest::{Label, SamplingConfig, Window, WindowId};
use crate::prompting::{enforce_budget, parse_output, to_decision, BudgetStatus, DecisionClass, ParsedVerdict, PromptSpec, PromptTier};
use crate::time;

use self::clock::{next_tick, Clock, VirtualClock, WallClock};
use self::debounce::{DebounceState, HandoffEvent};
use self::latency::LatencyBreakdown;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Virtual time advanced by modeled latencies. Deterministic.
    Simulated,
    /// Real time, for live backends.
    WallClock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Stochastic,
    Replay,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Built-in profile key or path to a profile file (stochastic backend).
    pub profile: Option<String>,
    pub endpoint: Option<String>,
    pub replay_log: Option<PathBuf>,
    /// HTTP timeout for the remote client; defaults to the deadline.
    pub timeout_s: Option<f64>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Stochastic,
            profile: Some("bf16-video".into()),
            endpoint: None,
            replay_log: None,
            timeout_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub tier: PromptTier,
    pub max_new_tokens: Option<u32>,
    pub context: BTreeMap<String, String>,
    /// Overrides the built-in template for `tier`.
    pub template_path: Option<PathBuf>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            tier: PromptTier::Minimal,
            max_new_tokens: None,
            context: BTreeMap::new(),
            template_path: None,
        }
    }
}

/// Fixed non-inference costs charged per cycle in simulated mode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Overheads {
    pub sense_s: f64,
    pub preprocess_s: f64,
    pub post_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_s: f64,
    pub max_backoff_s: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            backoff_s: 0.05,
            max_backoff_s: 0.2,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let secs = (self.backoff_s * 2f64.powi(attempt.saturating_sub(1) as i32)).min(self.max_backoff_s);
        time::from_secs(secs).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObserverConfig {
    pub rate_hz: f64,
    pub deadline_s: f64,
    pub n_min: u32,
    pub sampling: SamplingConfig,
    pub prompt: PromptConfig,
    pub backend: BackendConfig,
    pub clock: ClockMode,
    /// Wall-clock only: tick at `rate_hz` against the stream timeline. When
    /// off, windows are processed back to back and none are dropped.
    pub pacing: bool,
    pub overheads: Overheads,
    pub retry: RetryPolicy,
    pub seed: u64,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        ObserverConfig {
            rate_hz: 1.0,
            deadline_s: 1.0,
            n_min: 2,
            sampling: SamplingConfig::default(),
            prompt: PromptConfig::default(),
            backend: BackendConfig::default(),
            clock: ClockMode::Simulated,
            pacing: true,
            overheads: Overheads::default(),
            retry: RetryPolicy::default(),
            seed: 0,
        }
    }
}

impl ObserverConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_string()));
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return bad("rate_hz must be positive");
        }
        if time::from_secs(self.deadline_s).is_none_or(|d| d.is_zero()) {
            return bad("deadline_s must be positive");
        }
        if self.n_min == 0 {
            return bad("n_min must be positive");
        }
        for (name, v) in [
            ("sense_s", self.overheads.sense_s),
            ("preprocess_s", self.overheads.preprocess_s),
            ("post_s", self.overheads.post_s),
        ] {
            if time::from_secs(v).is_none() {
                return Err(RunError::Config(format!("overhead {name} must be nonnegative")));
            }
        }
        self.sampling.validate().map_err(|e| RunError::Config(e.to_string()))?;
        if self.deadline_s > 1.0 / self.rate_hz {
            ::log::warn!(
                "deadline {}s exceeds the {}s cycle period; late windows will be dropped",
                self.deadline_s,
                1.0 / self.rate_hz
            );
        }
        Ok(())
    }

    pub fn deadline(&self) -> Duration {
        time::from_secs(self.deadline_s).unwrap_or_default()
    }

    pub fn period(&self) -> Duration {
        time::from_secs(1.0 / self.rate_hz).unwrap_or_default()
    }

    /// Lowercase hex SHA-256 of the config's canonical JSON.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// One entry of the output sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverDecision {
    pub window: WindowId,
    pub gt: Option<Label>,
    pub decision_class: DecisionClass,
    pub z: u8,
    pub verdict: Option<ParsedVerdict>,
    /// `None` when the call was abandoned by the watchdog.
    pub response: Option<BackendResponse>,
    pub backend_id: String,
    pub profile: Option<String>,
    pub latency: LatencyBreakdown,
    pub deadline_violated: bool,
    pub budget: BudgetStatus,
    /// Episode time at which the decision was available.
    pub decided_at: Duration,
    pub attempts: u32,
}

impl ObserverDecision {
    /// A zero-latency decision of the given class, for driving the debounce
    /// machine directly.
    pub fn synthetic(window: WindowId, class: DecisionClass) -> Self {
        ObserverDecision {
            window,
            gt: None,
            decision_class: class,
            z: u8::from(class == DecisionClass::Anomaly),
            verdict: None,
            response: None,
            backend_id: "synthetic".into(),
            profile: None,
            latency: LatencyBreakdown::default(),
            deadline_violated: false,
            budget: BudgetStatus::Ok,
            decided_at: Duration::ZERO,
            attempts: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub windows_total: u64,
    pub processed: u64,
    pub dropped: u64,
    /// Excessive-latency hazardous events (watchdog timeouts).
    pub timeouts: u64,
    pub deadline_violations: u64,
    pub handoffs: u64,
    pub retries: u64,
    pub budget_overruns: u64,
    pub unknowns: u64,
    pub unparseables: u64,
    pub dropped_windows: Vec<WindowId>,
}

impl RunStats {
    fn merge(&mut self, other: RunStats) {
        self.windows_total += other.windows_total;
        self.processed += other.processed;
        self.dropped += other.dropped;
        self.timeouts += other.timeouts;
        self.deadline_violations += other.deadline_violations;
        self.handoffs += other.handoffs;
        self.retries += other.retries;
        self.budget_overruns += other.budget_overruns;
        self.unknowns += other.unknowns;
        self.unparseables += other.unparseables;
        self.dropped_windows.extend(other.dropped_windows);
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub decisions: Vec<ObserverDecision>,
    pub handoffs: Vec<HandoffEvent>,
    pub stats: RunStats,
}

impl RunOutput {
    pub fn extend(&mut self, other: RunOutput) {
        self.decisions.extend(other.decisions);
        self.handoffs.extend(other.handoffs);
        self.stats.merge(other.stats);
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid observer config: {0}")]
    Config(String),
    #[error("backend failed on window {window}: {source}")]
    Backend {
        window: WindowId,
        #[source]
        source: BackendError,
    },
}

struct CycleResult {
    decision: ObserverDecision,
    /// How long the observer was occupied by this cycle.
    busy: Duration,
    retries: u64,
}

// The watchdog fires once the deadline has strictly passed.
fn watchdog_instant(deadline: Duration) -> Duration {
    deadline + Duration::from_nanos(1)
}

fn finish_decision(
    window: &Window,
    prompt: &PromptSpec,
    response: BackendResponse,
    latency: LatencyBreakdown,
    deadline: Duration,
    decided_at: Duration,
    attempts: u32,
) -> ObserverDecision {
    let mut verdict = parse_output(&response.raw_text, prompt);
    verdict.tokens_generated = response.tokens_generated;
    let budget = enforce_budget(prompt, response.tokens_generated);
    let (z, class) = to_decision(&verdict);
    ObserverDecision {
        window: window.id(),
        gt: window.label,
        decision_class: class,
        z,
        verdict: Some(verdict),
        backend_id: response.backend_id.clone(),
        profile: response.profile.clone(),
        response: Some(response),
        latency,
        deadline_violated: latency.total > deadline,
        budget,
        decided_at,
        attempts,
    }
}

/// `late` is the abandoned response when one eventually arrived; its backend
/// identity is kept so replays of the log attribute it the same way.
fn timed_out_decision(
    window: &Window,
    backend: &dyn Backend,
    late: Option<&BackendResponse>,
    latency: LatencyBreakdown,
    decided_at: Duration,
    attempts: u32,
) -> ObserverDecision {
    let (backend_id, profile) = match late {
        Some(r) => (r.backend_id.clone(), r.profile.clone()),
        None => (backend.id().to_string(), backend.profile()),
    };
    ObserverDecision {
        window: window.id(),
        gt: window.label,
        decision_class: DecisionClass::TimedOut,
        z: 0,
        verdict: None,
        response: None,
        backend_id,
        profile,
        latency,
        deadline_violated: true,
        budget: BudgetStatus::Ok,
        decided_at,
        attempts,
    }
}

fn simulated_cycle(
    window: &Window,
    cfg: &ObserverConfig,
    prompt: &PromptSpec,
    backend: &dyn Backend,
    cycle_start: Duration,
) -> Result<CycleResult, RunError> {
    let deadline = cfg.deadline();
    let sense = time::from_secs(cfg.overheads.sense_s).unwrap_or_default();
    let preprocess = time::from_secs(cfg.overheads.preprocess_s).unwrap_or_default();
    let post = time::from_secs(cfg.overheads.post_s).unwrap_or_default();
    let req = BackendRequest {
        window: window.clone(),
        prompt: prompt.clone(),
        deadline,
    };

    let mut waited = Duration::ZERO;
    let mut attempts = 0u32;
    let response = loop {
        attempts += 1;
        match backend.infer(&req) {
            Ok(resp) => break Some(resp),
            Err(e) if e.is_retryable() => {
                let backoff = cfg.retry.backoff(attempts);
                if attempts > cfg.retry.max_retries || sense + preprocess + waited + backoff > deadline {
                    break None;
                }
                waited += backoff;
            }
            Err(source) => {
                return Err(RunError::Backend {
                    window: window.id(),
                    source,
                })
            }
        }
    };
    let retries = u64::from(attempts - 1);

    match response {
        Some(resp) if sense + preprocess + waited + resp.infer <= deadline => {
            let latency = LatencyBreakdown::new(sense, preprocess, waited + resp.infer, post);
            let decided_at = cycle_start + latency.total;
            let decision = finish_decision(window, prompt, resp, latency, deadline, decided_at, attempts);
            Ok(CycleResult {
                decision,
                busy: latency.total,
                retries,
            })
        }
        Some(resp) => {
            // Late answer: abandoned at the deadline, but the log keeps the
            // modeled inference time so replays time out identically.
            let latency = LatencyBreakdown::new(sense, preprocess, waited + resp.infer, Duration::ZERO);
            let busy = watchdog_instant(deadline);
            let decision = timed_out_decision(window, backend, Some(&resp), latency, cycle_start + busy, attempts);
            Ok(CycleResult { decision, busy, retries })
        }
        None => {
            let busy = watchdog_instant(deadline);
            let infer = busy.saturating_sub(sense + preprocess);
            let latency = LatencyBreakdown::new(sense, preprocess, infer, Duration::ZERO);
            let decision = timed_out_decision(window, backend, None, latency, cycle_start + busy, attempts);
            Ok(CycleResult { decision, busy, retries })
        }
    }
}

fn wall_clock_cycle(
    window: &Window,
    cfg: &ObserverConfig,
    prompt: &PromptSpec,
    backend: &Arc<dyn Backend>,
    episode_clock: &WallClock,
) -> Result<CycleResult, RunError> {
    let deadline = cfg.deadline();
    let fire_at = watchdog_instant(deadline);
    let t0 = Instant::now();
    let cycle_start = episode_clock.now();

    let frames = window.clone();
    let sense = t0.elapsed();
    let req = BackendRequest {
        window: frames,
        prompt: prompt.clone(),
        deadline,
    };
    let preprocess = t0.elapsed() - sense;

    let infer_start = Instant::now();
    let mut attempts = 0u32;
    let response = loop {
        attempts += 1;
        let remaining = fire_at.saturating_sub(t0.elapsed());
        if remaining.is_zero() {
            break None;
        }
        let (tx, rx) = mpsc::channel();
        let worker_backend = Arc::clone(backend);
        let worker_req = req.clone();
        // Abandoned calls keep running detached; their result is discarded.
        std::thread::spawn(move || {
            let _ = tx.send(worker_backend.infer(&worker_req));
        });
        match rx.recv_timeout(remaining) {
            Ok(Ok(resp)) => break Some(resp),
            Ok(Err(e)) if e.is_retryable() => {
                let backoff = cfg.retry.backoff(attempts);
                if attempts > cfg.retry.max_retries || t0.elapsed() + backoff > fire_at {
                    // No answer is coming; hold until the watchdog fires.
                    std::thread::sleep(fire_at.saturating_sub(t0.elapsed()));
                    break None;
                }
                std::thread::sleep(backoff);
            }
            Ok(Err(source)) => {
                return Err(RunError::Backend {
                    window: window.id(),
                    source,
                })
            }
            Err(_) => break None,
        }
    };
    let infer = infer_start.elapsed();
    let retries = u64::from(attempts - 1);

    match response {
        Some(resp) if t0.elapsed() <= deadline => {
            let post_start = Instant::now();
            let mut decision = finish_decision(
                window,
                prompt,
                resp,
                LatencyBreakdown::default(),
                deadline,
                Duration::ZERO,
                attempts,
            );
            let post = post_start.elapsed();
            decision.latency = LatencyBreakdown::new(sense, preprocess, infer, post);
            decision.deadline_violated = decision.latency.total > deadline;
            decision.decided_at = episode_clock.now();
            Ok(CycleResult {
                busy: episode_clock.now() - cycle_start,
                decision,
                retries,
            })
        }
        late => {
            let infer = infer.max(fire_at.saturating_sub(sense + preprocess));
            let latency = LatencyBreakdown::new(sense, preprocess, infer, Duration::ZERO);
            let decision =
                timed_out_decision(window, backend.as_ref(), late.as_ref(), latency, episode_clock.now(), attempts);
            Ok(CycleResult {
                busy: episode_clock.now() - cycle_start,
                decision,
                retries,
            })
        }
    }
}

enum EpisodeClock {
    Virtual(VirtualClock),
    Wall(WallClock),
}

impl EpisodeClock {
    fn as_clock(&mut self) -> &mut dyn Clock {
        match self {
            EpisodeClock::Virtual(c) => c,
            EpisodeClock::Wall(c) => c,
        }
    }
}

/// Runs one episode (the windows of a single clip).
pub fn run_episode(
    windows: &[Window],
    cfg: &ObserverConfig,
    prompt: &PromptSpec,
    backend: &Arc<dyn Backend>,
) -> Result<RunOutput, RunError> {
    let mut out = RunOutput::default();
    out.stats.windows_total = windows.len() as u64;
    if windows.is_empty() {
        return Ok(out);
    }

    let origin = windows.iter().map(|w| w.start).min().unwrap_or_default();
    let mut order: Vec<(Duration, &Window)> = windows
        .iter()
        .map(|w| (w.last_frame_time().saturating_sub(origin), w))
        .collect();
    order.sort_by_key(|(arrival, w)| (*arrival, w.window_index));

    let period = cfg.period();
    let paced = cfg.clock == ClockMode::Simulated || cfg.pacing;
    let mut clock = match cfg.clock {
        ClockMode::Simulated => EpisodeClock::Virtual(VirtualClock::new()),
        ClockMode::WallClock => EpisodeClock::Wall(WallClock::start()),
    };
    let mut state = DebounceState::new(cfg.n_min);

    let mut pos = 0;
    while pos < order.len() {
        let chosen = if paced {
            let c = clock.as_clock();
            let mut tick = next_tick(c.now(), period);
            if order[pos].0 > tick {
                tick = next_tick(order[pos].0, period);
            }
            c.advance_to(tick);
            let now = c.now();
            let mut j = pos;
            while j + 1 < order.len() && order[j + 1].0 <= now {
                j += 1;
            }
            for (_, stale) in &order[pos..j] {
                out.stats.dropped += 1;
                out.stats.dropped_windows.push(stale.id());
            }
            j
        } else {
            pos
        };
        let window = order[chosen].1;

        let cycle = match &mut clock {
            EpisodeClock::Virtual(c) => {
                let start = c.now();
                let cycle = simulated_cycle(window, cfg, prompt, backend.as_ref(), start)?;
                c.advance(cycle.busy);
                cycle
            }
            EpisodeClock::Wall(c) => wall_clock_cycle(window, cfg, prompt, backend, c)?,
        };

        let d = &cycle.decision;
        out.stats.processed += 1;
        out.stats.retries += cycle.retries;
        out.stats.timeouts += u64::from(d.decision_class == DecisionClass::TimedOut);
        out.stats.deadline_violations += u64::from(d.deadline_violated);
        out.stats.budget_overruns += u64::from(matches!(d.budget, BudgetStatus::Exceeded { .. }));
        out.stats.unknowns += u64::from(d.decision_class == DecisionClass::Unknown);
        out.stats.unparseables += u64::from(d.decision_class == DecisionClass::Unparseable);

        let (next, event) = state.step(d);
        state = next;
        if let Some(ev) = event {
            out.stats.handoffs += 1;
            out.handoffs.push(ev);
        }
        out.decisions.push(cycle.decision);
        pos = chosen + 1;
    }
    Ok(out)
}

/// Splits a window stream into episodes (maximal runs of the same clip).
pub fn episodes(windows: &[Window]) -> Vec<&[Window]> {
    windows.chunk_by(|a, b| a.clip_id == b.clip_id).collect()
}

/// Runs the observer over a stream of windows, one episode per clip.
pub fn run_observer(
    windows: &[Window],
    cfg: &ObserverConfig,
    prompt: &PromptSpec,
    backend: Arc<dyn Backend>,
) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let mut out = RunOutput::default();
    for episode in episodes(windows) {
        out.extend(run_episode(episode, cfg, prompt, &backend)?);
    }
    Ok(out)
}

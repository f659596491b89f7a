//! Semantic observer runtime.
//!
//! A low-rate observer that watches sliding windows of camera frames, asks a
//! vision-language model whether the scene violates normal driving
//! expectations, debounces positive answers into fail-safe handoff triggers,
//! and scores the whole loop against confusion-matrix metrics and HARA-style
//! safety goals.
//!
//! Pipeline: [`ingest`] → [`prompting`] → [`backend`] → [`orchestrator`] →
//! [`metrics`] → [`gate`].

pub mod backend;
pub mod fixtures;
pub mod gate;
pub mod ingest;
pub mod metrics;
pub mod orchestrator;
pub mod prompting;
pub mod time;

pub use ingest::{Clip, Frame, Label, SamplingConfig, Window};
pub use prompting::{ParsedVerdict, PromptSpec, PromptTier};

/// Version string embedded in every artifact written by the runtime.
pub const TOOL_VERSION: &str = concat!("semobs/", env!("CARGO_PKG_VERSION"));

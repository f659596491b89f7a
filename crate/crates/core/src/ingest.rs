//! Frame manifests and sliding temporal windows.
//!
//! A manifest lists frame references (never pixels) per clip. Windows are cut
//! on a fixed start grid `0, stride, 2*stride, ...` relative to the first
//! frame of the clip; each window picks the `k` frames nearest to
//! `start + j/fps`. Partial trailing windows are dropped.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Anomaly,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "Normal",
            Label::Anomaly => "Anomaly",
        })
    }
}

/// One timestamped frame reference. `uri` is carried through to the backend
/// untouched; `ego_state` is opaque and not used for decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub clip_id: String,
    pub frame_index: u64,
    #[serde(rename = "timestamp_s", with = "time::serde_secs")]
    pub timestamp: Duration,
    #[serde(default)]
    pub uri: Option<String>,
    #[serde(default)]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego_state: Option<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed record at line {line_no}: {detail}")]
    MalformedRecord { line_no: usize, detail: String },
    #[error("duplicate frame {frame_index} in clip {clip_id:?}")]
    DuplicateFrame { clip_id: String, frame_index: u64 },
    #[error("timestamp decreases at frame {frame_index} in clip {clip_id:?}")]
    NonMonotonicTimestamp { clip_id: String, frame_index: u64 },
    #[error("unknown manifest format {0:?} (expected jsonl or csv)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestFormat {
    Jsonl,
    Csv,
}

impl ManifestFormat {
    /// Guesses the format from a file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => ManifestFormat::Csv,
            _ => ManifestFormat::Jsonl,
        }
    }
}

impl FromStr for ManifestFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(ManifestFormat::Jsonl),
            "csv" => Ok(ManifestFormat::Csv),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

/// All frames of one clip, sorted by `frame_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub clip_id: String,
    pub frames: Vec<Frame>,
}

impl Clip {
    /// Sorts `frames` by index and checks the per-clip invariants.
    pub fn new(clip_id: impl Into<String>, mut frames: Vec<Frame>) -> Result<Self, IngestError> {
        let clip_id = clip_id.into();
        frames.sort_by_key(|f| f.frame_index);
        for pair in frames.windows(2) {
            if pair[0].frame_index == pair[1].frame_index {
                return Err(IngestError::DuplicateFrame {
                    clip_id,
                    frame_index: pair[1].frame_index,
                });
            }
            if pair[1].timestamp < pair[0].timestamp {
                return Err(IngestError::NonMonotonicTimestamp {
                    clip_id,
                    frame_index: pair[1].frame_index,
                });
            }
        }
        Ok(Clip { clip_id, frames })
    }

    /// Time between the first and last frame.
    pub fn duration(&self) -> Duration {
        match (self.frames.first(), self.frames.last()) {
            (Some(first), Some(last)) => last.timestamp - first.timestamp,
            _ => Duration::ZERO,
        }
    }
}

#[derive(Deserialize)]
struct CsvFrame {
    clip_id: String,
    frame_index: u64,
    timestamp_s: f64,
    uri: Option<String>,
    label: Option<Label>,
}

/// Reads a frame manifest and groups it into clips, in order of first
/// appearance. An empty stream yields no clips.
pub fn load_manifest<R: Read>(source: R, format: ManifestFormat) -> Result<Vec<Clip>, IngestError> {
    let frames = match format {
        ManifestFormat::Jsonl => read_jsonl(source)?,
        ManifestFormat::Csv => read_csv(source)?,
    };

    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<Frame>> = HashMap::new();
    for frame in frames {
        let entry = grouped.entry(frame.clip_id.clone()).or_insert_with(|| {
            order.push(frame.clip_id.clone());
            Vec::new()
        });
        entry.push(frame);
    }
    order
        .into_iter()
        .map(|id| {
            let frames = grouped.remove(&id).unwrap_or_default();
            Clip::new(id, frames)
        })
        .collect()
}

fn read_jsonl<R: Read>(source: R) -> Result<Vec<Frame>, IngestError> {
    let mut frames = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: Frame = serde_json::from_str(&line).map_err(|e| IngestError::MalformedRecord {
            line_no: i + 1,
            detail: e.to_string(),
        })?;
        frames.push(frame);
    }
    Ok(frames)
}

fn read_csv<R: Read>(source: R) -> Result<Vec<Frame>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut frames = Vec::new();
    for result in reader.deserialize::<CsvFrame>() {
        let row = result.map_err(|e| IngestError::MalformedRecord {
            line_no: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let line_no = frames.len() + 2;
        let timestamp = time::from_secs(row.timestamp_s).ok_or_else(|| IngestError::MalformedRecord {
            line_no,
            detail: format!("invalid timestamp_s {}", row.timestamp_s),
        })?;
        frames.push(Frame {
            clip_id: row.clip_id,
            frame_index: row.frame_index,
            timestamp,
            uri: row.uri.filter(|u| !u.is_empty()),
            label: row.label,
            ego_state: None,
        });
    }
    Ok(frames)
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid sampling config: {0}")]
pub struct SamplingConfigError(pub String);

/// How frames are grouped into windows. The defaults are `k = 5` frames at
/// 1 fps over 5 s windows with a 2 s stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub k: usize,
    pub fps: f64,
    pub window_duration_s: f64,
    pub stride_s: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            k: 5,
            fps: 1.0,
            window_duration_s: 5.0,
            stride_s: 2.0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SamplingConfigError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.k == 0 {
            return Err(SamplingConfigError("k must be positive".into()));
        }
        if !positive(self.fps) || !positive(self.window_duration_s) || !positive(self.stride_s) {
            return Err(SamplingConfigError(
                "fps, window_duration_s and stride_s must be positive".into(),
            ));
        }
        let expected = (self.window_duration_s * self.fps).round();
        if expected != self.k as f64 {
            return Err(SamplingConfigError(format!(
                "k = {} but round(window_duration_s * fps) = {expected}",
                self.k
            )));
        }
        Ok(())
    }

    pub fn window_duration(&self) -> Duration {
        time::from_secs(self.window_duration_s).unwrap_or_default()
    }

    pub fn stride(&self) -> Duration {
        time::from_secs(self.stride_s).unwrap_or_default()
    }

    /// Offset of the j-th sampling grid point from the window start.
    pub fn frame_offset(&self, j: usize) -> Duration {
        time::from_secs(j as f64 / self.fps).unwrap_or_default()
    }

    pub fn frame_period(&self) -> Duration {
        self.frame_offset(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowId {
    pub clip_id: String,
    pub window_index: u64,
}

impl fmt::Display for WindowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.clip_id, self.window_index)
    }
}

/// `k` frames of one clip presented to the model as a single input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub clip_id: String,
    pub window_index: u64,
    pub frames: Vec<Frame>,
    #[serde(rename = "start_s", with = "time::serde_secs")]
    pub start: Duration,
    #[serde(rename = "end_s", with = "time::serde_secs")]
    pub end: Duration,
    /// OR over member frame labels; `None` when no member frame is labeled.
    pub label: Option<Label>,
}

impl Window {
    pub fn id(&self) -> WindowId {
        WindowId {
            clip_id: self.clip_id.clone(),
            window_index: self.window_index,
        }
    }

    /// Timestamp of the newest member frame, i.e. when the window's data is
    /// complete.
    pub fn last_frame_time(&self) -> Duration {
        self.frames.iter().map(|f| f.timestamp).max().unwrap_or(self.start)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplingWarning {
    ClipTooShort {
        clip_id: String,
        duration: Duration,
        window: Duration,
    },
}

impl fmt::Display for SamplingWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingWarning::ClipTooShort {
                clip_id,
                duration,
                window,
            } => write!(
                f,
                "clip {clip_id:?} lasts {:.3}s, shorter than the {:.3}s window",
                duration.as_secs_f64(),
                window.as_secs_f64()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sampled {
    pub windows: Vec<Window>,
    pub warning: Option<SamplingWarning>,
}

fn count_windows(duration: Duration, window: Duration, stride: Duration) -> u64 {
    if duration < window || stride.is_zero() {
        return 0;
    }
    ((duration - window).as_nanos() / stride.as_nanos()) as u64 + 1
}

/// Number of full windows that fit in a clip of the given length:
/// `floor((duration - window) / stride) + 1`, clamped at zero.
pub fn window_count(clip_duration_s: f64, cfg: &SamplingConfig) -> u64 {
    let duration = time::from_secs(clip_duration_s).unwrap_or_default();
    count_windows(duration, cfg.window_duration(), cfg.stride())
}

fn nearest_frame(frames: &[Frame], target: Duration) -> &Frame {
    let idx = frames.partition_point(|f| f.timestamp < target);
    if idx == 0 {
        return &frames[0];
    }
    if idx == frames.len() {
        return &frames[idx - 1];
    }
    let before = &frames[idx - 1];
    let after = &frames[idx];
    // ties go to the earlier frame
    if after.timestamp - target < target - before.timestamp {
        after
    } else {
        before
    }
}

/// Cuts a clip into full windows. Never crosses clip boundaries.
pub fn sample_windows(clip: &Clip, cfg: &SamplingConfig) -> Sampled {
    let window = cfg.window_duration();
    let stride = cfg.stride();
    let duration = clip.duration();
    let count = if clip.frames.is_empty() {
        0
    } else {
        count_windows(duration, window, stride)
    };
    if count == 0 {
        let warning = SamplingWarning::ClipTooShort {
            clip_id: clip.clip_id.clone(),
            duration,
            window,
        };
        log::warn!("{warning}");
        return Sampled {
            windows: Vec::new(),
            warning: Some(warning),
        };
    }

    let origin = clip.frames[0].timestamp;
    let offsets: Vec<Duration> = (0..cfg.k).map(|j| cfg.frame_offset(j)).collect();
    let windows = (0..count)
        .map(|n| {
            let start = origin + Duration::from_nanos((stride.as_nanos() * n as u128) as u64);
            let frames: Vec<Frame> = offsets
                .iter()
                .map(|&off| nearest_frame(&clip.frames, start + off).clone())
                .collect();
            let label = frames
                .iter()
                .filter_map(|f| f.label)
                .max_by_key(|l| *l == Label::Anomaly);
            Window {
                clip_id: clip.clip_id.clone(),
                window_index: n,
                frames,
                start,
                end: start + window,
                label,
            }
        })
        .collect();
    Sampled {
        windows,
        warning: None,
    }
}

//! Deterministic generators for the bundled fixtures: prediction logs with a
//! prescribed confusion matrix, and a synthetic labeled frame manifest.

use std::io::Write;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ingest::{Frame, Label};
use crate::metrics::ConfusionMatrix;
use crate::orchestrator::log::PredictionRecord;
use crate::orchestrator::{BackendConfig, ObserverConfig, PromptConfig};
use crate::prompting::{DecisionClass, PromptTemplate, PromptTier};

/// Windows per synthetic clip in generated logs.
const WINDOWS_PER_CLIP: u64 = 13;

#[derive(Debug, Error, PartialEq)]
#[error("side counters ({side}) exceed fn + tn ({available})")]
pub struct InconsistentMatrix {
    pub side: u64,
    pub available: u64,
}

/// Everything a generated log needs besides its matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSpec {
    pub clip_prefix: String,
    pub latency: Duration,
    pub prompt_hash: String,
    pub backend_id: String,
    pub profile: Option<String>,
    pub n_min: u32,
    pub deadline: Duration,
}

/// Builds a log whose [`crate::metrics::score_log`] is exactly `m`.
///
/// Records come in blocks (tp, fp, fn, tn). Side counters are realized as
/// non-committed decisions taken from the fn records first, then tn.
pub fn synthetic_log(m: &ConfusionMatrix, spec: &LogSpec) -> Result<Vec<PredictionRecord>, InconsistentMatrix> {
    let side = m.unknowns + m.unparseables + m.timeouts;
    if side > m.fn_ + m.tn {
        return Err(InconsistentMatrix {
            side,
            available: m.fn_ + m.tn,
        });
    }
    let mut side_classes = std::iter::repeat_n(DecisionClass::Unknown, m.unknowns as usize)
        .chain(std::iter::repeat_n(DecisionClass::Unparseable, m.unparseables as usize))
        .chain(std::iter::repeat_n(DecisionClass::TimedOut, m.timeouts as usize));

    let mut cells: Vec<(Label, DecisionClass)> = Vec::with_capacity(m.scored() as usize);
    cells.extend(std::iter::repeat_n((Label::Anomaly, DecisionClass::Anomaly), m.tp as usize));
    cells.extend(std::iter::repeat_n((Label::Normal, DecisionClass::Anomaly), m.fp as usize));
    for _ in 0..m.fn_ {
        cells.push((Label::Anomaly, side_classes.next().unwrap_or(DecisionClass::Normal)));
    }
    for _ in 0..m.tn {
        cells.push((Label::Normal, side_classes.next().unwrap_or(DecisionClass::Normal)));
    }

    Ok(cells
        .into_iter()
        .enumerate()
        .map(|(i, (gt, decision))| {
            let i = i as u64;
            let raw_text = match decision {
                DecisionClass::Anomaly => "Anomaly",
                DecisionClass::Normal => "Normal",
                DecisionClass::Unknown => "Unknown",
                DecisionClass::Unparseable => "I cannot tell",
                DecisionClass::TimedOut => "",
            };
            PredictionRecord {
                clip_id: format!("{}-{:04}", spec.clip_prefix, i / WINDOWS_PER_CLIP),
                window_index: i % WINDOWS_PER_CLIP,
                gt: Some(gt),
                decision,
                z: u8::from(decision == DecisionClass::Anomaly),
                raw_text: raw_text.to_string(),
                tokens_generated: u32::from(!raw_text.is_empty()),
                sense: Duration::ZERO,
                preprocess: Duration::ZERO,
                infer: spec.latency,
                post: Duration::ZERO,
                total: spec.latency,
                deadline_violated: spec.latency > spec.deadline,
                prompt_hash: spec.prompt_hash.clone(),
                backend_id: spec.backend_id.clone(),
                profile: spec.profile.clone(),
                tool_version: None,
                config_hash: None,
                seed: None,
                n_min: Some(spec.n_min),
                deadline_s: Some(spec.deadline.as_secs_f64()),
            }
        })
        .collect())
}

/// A published benchmark row: file stem, matrix, latency and prompt tier.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub stem: &'static str,
    /// Built-in profile key.
    pub profile_key: &'static str,
    /// Profile label as written into logs.
    pub profile: &'static str,
    pub tier: PromptTier,
    pub matrix: ConfusionMatrix,
    pub latency: Duration,
}

/// The three static-image configurations and the three video
/// quantizations, with their counts and per-call latency.
pub fn benchmark_rows() -> Vec<BenchmarkRow> {
    let row = |stem, profile_key, profile, tier, tp, tn, fp, fn_, ms| BenchmarkRow {
        stem,
        profile_key,
        profile,
        tier,
        matrix: ConfusionMatrix::new(tp, tn, fp, fn_),
        latency: Duration::from_micros(ms),
    };
    vec![
        row("nf4_verbose_static", "nf4-static", "NF4/static", PromptTier::Verbose, 806, 279, 168, 909, 800_000),
        row("int8_verbose_static", "int8-static", "INT8/static", PromptTier::Verbose, 773, 301, 146, 942, 1_330_000),
        row("int8_pruned_static", "int8-pruned-static", "INT8/static", PromptTier::Pruned, 215, 263, 184, 1500, 1_370_000),
        row("bf16_video", "bf16-video", "BF16/video", PromptTier::Minimal, 51, 96, 84, 15, 485_000),
        row("int8_video", "int8-video", "INT8/video", PromptTier::Minimal, 50, 99, 81, 16, 787_000),
        row("nf4_video", "nf4-video", "NF4/video", PromptTier::Minimal, 7, 162, 18, 59, 436_000),
    ]
}

pub fn benchmark_log(row: &BenchmarkRow) -> Vec<PredictionRecord> {
    let spec = LogSpec {
        clip_prefix: row.stem.to_string(),
        latency: row.latency,
        prompt_hash: PromptTemplate::builtin(row.tier).hash,
        backend_id: "benchmark".into(),
        profile: Some(row.profile.to_string()),
        n_min: 2,
        deadline: Duration::from_secs(1),
    };
    synthetic_log(&row.matrix, &spec).expect("benchmark rows have no side counters")
}

/// Observer config describing the deployment a benchmark row was measured on.
pub fn benchmark_config(row: &BenchmarkRow) -> ObserverConfig {
    ObserverConfig {
        n_min: 2,
        deadline_s: 1.0,
        prompt: PromptConfig {
            tier: row.tier,
            ..PromptConfig::default()
        },
        backend: BackendConfig {
            profile: Some(row.profile_key.to_string()),
            ..BackendConfig::default()
        },
        ..ObserverConfig::default()
    }
}

/// Parameters of the synthetic manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestSpec {
    pub clips: usize,
    pub min_duration_s: u64,
    pub max_duration_s: u64,
    /// Probability that a clip contains a hazard segment.
    pub hazard_rate: f64,
    pub min_hazard_s: u64,
    pub max_hazard_s: u64,
    pub seed: u64,
}

impl Default for ManifestSpec {
    fn default() -> Self {
        ManifestSpec {
            clips: 224,
            min_duration_s: 20,
            max_duration_s: 40,
            hazard_rate: 0.7,
            min_hazard_s: 3,
            max_hazard_s: 8,
            seed: 2024,
        }
    }
}

/// Labeled frames at 1 fps. A hazard clip has one contiguous anomalous
/// segment; every other frame is normal.
pub fn synthetic_manifest(spec: &ManifestSpec) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut frames = Vec::new();
    for c in 0..spec.clips {
        let clip_id = format!("hpt-{c:03}");
        let duration = rng.random_range(spec.min_duration_s..=spec.max_duration_s);
        let hazard = if rng.random_bool(spec.hazard_rate) {
            let len = rng.random_range(spec.min_hazard_s..=spec.max_hazard_s).min(duration);
            let start = rng.random_range(0..=duration - len);
            start..start + len
        } else {
            0..0
        };
        for i in 0..=duration {
            frames.push(Frame {
                clip_id: clip_id.clone(),
                frame_index: i,
                timestamp: Duration::from_secs(i),
                uri: Some(format!("frames/{clip_id}/{i:04}.jpg")),
                label: Some(if hazard.contains(&i) { Label::Anomaly } else { Label::Normal }),
                ego_state: None,
            });
        }
    }
    frames
}

pub fn write_manifest_csv<W: Write>(frames: &[Frame], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["clip_id", "frame_index", "timestamp_s", "uri", "label"])?;
    for f in frames {
        w.write_record([
            f.clip_id.clone(),
            f.frame_index.to_string(),
            f.timestamp.as_secs_f64().to_string(),
            f.uri.clone().unwrap_or_default(),
            f.label.map(|l| format!("{l:?}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::score_log;
    use proptest::prelude::*;

    fn spec() -> LogSpec {
        LogSpec {
            clip_prefix: "t".into(),
            latency: Duration::from_millis(485),
            prompt_hash: "h".into(),
            backend_id: "b".into(),
            profile: None,
            n_min: 2,
            deadline: Duration::from_secs(1),
        }
    }

    #[test]
    fn benchmark_logs_score_to_their_rows() {
        for row in benchmark_rows() {
            assert_eq!(score_log(&benchmark_log(&row)).unwrap(), row.matrix, "{}", row.stem);
        }
    }

    #[test]
    fn too_many_side_counts_are_rejected() {
        let m = ConfusionMatrix {
            unknowns: 3,
            ..ConfusionMatrix::new(1, 1, 1, 1)
        };
        assert_eq!(synthetic_log(&m, &spec()), Err(InconsistentMatrix { side: 3, available: 2 }));
    }

    #[test]
    fn manifest_is_deterministic_and_mixed() {
        let spec = ManifestSpec::default();
        let a = synthetic_manifest(&spec);
        assert_eq!(a, synthetic_manifest(&spec));
        let anomalous = a.iter().filter(|f| f.label == Some(Label::Anomaly)).count();
        assert!(anomalous > 0 && anomalous < a.len() / 2);
    }

    proptest! {
        #[test]
        fn scoring_inverts_the_generator(
            tp in 0u64..300, tn in 0u64..300, fp in 0u64..300, fn_ in 0u64..300,
            u in 0u64..100, p in 0u64..100, t in 0u64..100,
        ) {
            let mut m = ConfusionMatrix::new(tp, tn, fp, fn_);
            let room = fn_ + tn;
            m.unknowns = u.min(room);
            m.unparseables = p.min(room - m.unknowns);
            m.timeouts = t.min(room - m.unknowns - m.unparseables);
            let log = synthetic_log(&m, &spec()).unwrap();
            prop_assert_eq!(score_log(&log).unwrap(), m);
        }
    }
}

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quantization {
    BF16,
    INT8,
    NF4,
    #[serde(rename = "custom")]
    Custom,
}

impl fmt::Display for Quantization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantization::BF16 => "BF16",
            Quantization::INT8 => "INT8",
            Quantization::NF4 => "NF4",
            Quantization::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Static,
    Video,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Static => "static",
            Modality::Video => "video",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("profile {0:?} is not a built-in profile or a readable file")]
    Unknown(String),
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("failed to parse profile file: {0}")]
    Parse(String),
}

/// Confusion counts a profile's rates are derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// On-disk profile: rates are given as confusion counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProfileFile {
    name: Quantization,
    modality: Modality,
    tp: u64,
    tn: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    #[serde(default)]
    unknown_rate: f64,
    mean_latency_s: f64,
    #[serde(default)]
    latency_jitter_s: Option<f64>,
}

/// Behavioral model of one weight-precision configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantProfile {
    pub name: Quantization,
    pub modality: Modality,
    pub tpr: f64,
    pub fpr: f64,
    pub unknown_rate: f64,
    pub mean_latency: Duration,
    pub latency_jitter: Duration,
    pub counts: Option<ProfileCounts>,
}

/// `(key, quantization, modality, tp, tn, fp, fn, mean latency s)`.
pub type BuiltinProfile = (&'static str, Quantization, Modality, u64, u64, u64, u64, f64);

/// Video rows come from the 224-clip hazard-perception benchmark, static rows
/// from the 2,162-image road-damage benchmark with the verbose prompt (and the
/// pruned prompt for `int8-pruned-static`).
pub const BUILTIN_PROFILES: &[BuiltinProfile] = &[
    ("bf16-video", Quantization::BF16, Modality::Video, 51, 96, 84, 15, 0.485),
    ("int8-video", Quantization::INT8, Modality::Video, 50, 99, 81, 16, 0.787),
    ("nf4-video", Quantization::NF4, Modality::Video, 7, 162, 18, 59, 0.436),
    ("nf4-static", Quantization::NF4, Modality::Static, 806, 279, 168, 909, 0.80),
    ("int8-static", Quantization::INT8, Modality::Static, 773, 301, 146, 942, 1.33),
    ("int8-pruned-static", Quantization::INT8, Modality::Static, 215, 263, 184, 1500, 1.37),
];

fn ratio(num: u64, den: u64) -> Result<f64, ProfileError> {
    if den == 0 {
        return Err(ProfileError::Invalid("rate denominator is zero".into()));
    }
    Ok(num as f64 / den as f64)
}

impl QuantProfile {
    /// Builds a profile from confusion counts: `tpr = tp/(tp+fn)`,
    /// `fpr = fp/(fp+tn)`. Jitter defaults to 10% of the mean latency.
    pub fn from_counts(
        name: Quantization,
        modality: Modality,
        counts: ProfileCounts,
        unknown_rate: f64,
        mean_latency_s: f64,
        latency_jitter_s: Option<f64>,
    ) -> Result<Self, ProfileError> {
        let mean_latency = time::from_secs(mean_latency_s)
            .filter(|d| !d.is_zero())
            .ok_or_else(|| ProfileError::Invalid(format!("mean_latency_s {mean_latency_s} must be positive")))?;
        let jitter_s = latency_jitter_s.unwrap_or(mean_latency_s * 0.1);
        let latency_jitter = time::from_secs(jitter_s)
            .ok_or_else(|| ProfileError::Invalid(format!("latency_jitter_s {jitter_s} must be nonnegative")))?;
        let profile = QuantProfile {
            name,
            modality,
            tpr: ratio(counts.tp, counts.tp + counts.fn_)?,
            fpr: ratio(counts.fp, counts.fp + counts.tn)?,
            unknown_rate,
            mean_latency,
            latency_jitter,
            counts: Some(counts),
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Fixed-rate profile with no backing counts.
    pub fn with_rates(
        name: Quantization,
        modality: Modality,
        tpr: f64,
        fpr: f64,
        mean_latency: Duration,
        latency_jitter: Duration,
    ) -> Result<Self, ProfileError> {
        let profile = QuantProfile {
            name,
            modality,
            tpr,
            fpr,
            unknown_rate: 0.0,
            mean_latency,
            latency_jitter,
            counts: None,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Always-correct oracle with constant latency.
    pub fn perfect(mean_latency: Duration) -> Self {
        QuantProfile {
            name: Quantization::Custom,
            modality: Modality::Video,
            tpr: 1.0,
            fpr: 0.0,
            unknown_rate: 0.0,
            mean_latency,
            latency_jitter: Duration::ZERO,
            counts: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if !prob(self.tpr) || !prob(self.fpr) || !prob(self.unknown_rate) {
            return Err(ProfileError::Invalid("tpr, fpr and unknown_rate must lie in [0, 1]".into()));
        }
        if self.tpr + self.unknown_rate > 1.0 {
            return Err(ProfileError::Invalid("tpr + unknown_rate exceeds 1".into()));
        }
        if self.mean_latency.is_zero() {
            return Err(ProfileError::Invalid("mean latency must be positive".into()));
        }
        Ok(())
    }

    pub fn builtin(key: &str) -> Option<Self> {
        if key == "perfect" {
            return Some(Self::perfect(Duration::from_millis(485)));
        }
        BUILTIN_PROFILES
            .iter()
            .find(|p| p.0 == key)
            .map(|&(_, name, modality, tp, tn, fp, fn_, latency)| {
                Self::from_counts(name, modality, ProfileCounts { tp, tn, fp, fn_ }, 0.0, latency, None)
                    .expect("built-in profiles are valid")
            })
    }

    pub fn from_json(json: &str) -> Result<Self, ProfileError> {
        let file: ProfileFile = serde_json::from_str(json).map_err(|e| ProfileError::Parse(e.to_string()))?;
        Self::from_counts(
            file.name,
            file.modality,
            ProfileCounts {
                tp: file.tp,
                tn: file.tn,
                fp: file.fp,
                fn_: file.fn_,
            },
            file.unknown_rate,
            file.mean_latency_s,
            file.latency_jitter_s,
        )
    }

    /// Serializes to the on-disk format. Only profiles built from counts
    /// can be written.
    pub fn to_json(&self) -> Option<String> {
        let counts = self.counts?;
        let file = ProfileFile {
            name: self.name,
            modality: self.modality,
            tp: counts.tp,
            tn: counts.tn,
            fp: counts.fp,
            fn_: counts.fn_,
            unknown_rate: self.unknown_rate,
            mean_latency_s: self.mean_latency.as_secs_f64(),
            latency_jitter_s: Some(self.latency_jitter.as_secs_f64()),
        };
        serde_json::to_string_pretty(&file).ok()
    }

    /// Resolves a built-in key or a path to a profile JSON file.
    pub fn load(spec: &str) -> Result<Self, ProfileError> {
        if let Some(p) = Self::builtin(spec) {
            return Ok(p);
        }
        let path = Path::new(spec);
        match std::fs::read_to_string(path) {
            Ok(json) => Self::from_json(&json),
            Err(_) => Err(ProfileError::Unknown(spec.to_string())),
        }
    }

    /// Label written into logs and fingerprints, e.g. `BF16/video`.
    pub fn label(&self) -> String {
        format!("{}/{}", self.name, self.modality)
    }
}

impl FromStr for QuantProfile {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::load(s)
    }
}

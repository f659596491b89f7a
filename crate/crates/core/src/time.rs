//! Seconds <-> [`Duration`] conversions.
//!
//! All timing inside the crate is carried as `Duration` (integer nanoseconds),
//! so sums such as the latency breakdown are exact. Floating-point seconds
//! only appear at the serialization boundary.

use std::time::Duration;

const NANOS_PER_SEC: f64 = 1e9;

/// Converts nonnegative, finite seconds to a `Duration`, rounding to the
/// nearest nanosecond. Returns `None` for negative, NaN or infinite input.
pub fn from_secs(secs: f64) -> Option<Duration> {
    if !secs.is_finite() || secs < 0.0 {
        return None;
    }
    let nanos = (secs * NANOS_PER_SEC).round();
    if nanos > u64::MAX as f64 {
        return None;
    }
    Some(Duration::from_nanos(nanos as u64))
}

pub fn to_secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Serde adapter for `Duration` fields stored as floating-point seconds.
pub mod serde_secs {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        super::from_secs(secs)
            .ok_or_else(|| D::Error::custom(format!("invalid duration in seconds: {secs}")))
    }
}

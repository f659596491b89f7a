use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time;

#[derive(Debug, Error, PartialEq)]
#[error("latency component {component} is negative or not finite ({value})")]
pub struct NegativeComponent {
    pub component: &'static str,
    pub value: f64,
}

/// Per-cycle timing: sense + preprocess + infer + post. The total is an exact
/// integer-nanosecond sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LatencyBreakdown {
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
}

impl LatencyBreakdown {
    pub fn new(sense: Duration, preprocess: Duration, infer: Duration, post: Duration) -> Self {
        LatencyBreakdown {
            sense,
            preprocess,
            infer,
            post,
            total: sense + preprocess + infer + post,
        }
    }

    /// Time until the backend call returned (everything except post-processing).
    pub fn until_response(&self) -> Duration {
        self.sense + self.preprocess + self.infer
    }
}

pub fn account_latency(
    sense_s: f64,
    preprocess_s: f64,
    infer_s: f64,
    post_s: f64,
) -> Result<LatencyBreakdown, NegativeComponent> {
    let conv = |component: &'static str, value: f64| {
        time::from_secs(value).ok_or(NegativeComponent { component, value })
    };
    Ok(LatencyBreakdown::new(
        conv("sense_s", sense_s)?,
        conv("preprocess_s", preprocess_s)?,
        conv("infer_s", infer_s)?,
        conv("post_s", post_s)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_are_exact_sums() {
        assert_eq!(account_latency(0.0, 0.0, 0.485, 0.0).unwrap().total.as_secs_f64(), 0.485);
        let b = account_latency(0.01, 0.05, 0.80, 0.02).unwrap();
        assert_eq!(b.total, Duration::from_millis(880));
        assert_eq!(b.total.as_secs_f64(), 0.88);
        assert_eq!(account_latency(0.0, 0.0, 0.0, 0.0).unwrap().total, Duration::ZERO);
    }

    #[test]
    fn negative_component_is_rejected() {
        assert_eq!(
            account_latency(0.0, -0.01, 0.4, 0.0),
            Err(NegativeComponent {
                component: "preprocess_s",
                value: -0.01
            })
        );
    }
}

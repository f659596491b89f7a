//! Safety gate: checks a metrics report and the deployment it came from
//! against hazard-analysis safety goals, for use as a CI check.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Modality, QuantProfile, Quantization};
use crate::metrics::{MetricsReport, Score};
use crate::orchestrator::ObserverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Asil {
    A,
    B,
    C,
    D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    PrecisionAtLeast { threshold: f64 },
    RecallAtLeast { threshold: f64 },
    /// p95 latency within the bound and no deadline violations at all.
    LatencyWithin { p95_max_s: f64 },
    Prohibit { quantization: Quantization, modality: Modality },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyGoal {
    pub id: String,
    pub hazardous_event: String,
    pub asil: Asil,
    pub predicate: Predicate,
    /// Informational only.
    #[serde(default)]
    pub mitigation: String,
}

impl SafetyGoal {
    pub fn validate(&self) -> Result<(), GateError> {
        let ok = match self.predicate {
            Predicate::PrecisionAtLeast { threshold } | Predicate::RecallAtLeast { threshold } => {
                (0.0..=1.0).contains(&threshold)
            }
            Predicate::LatencyWithin { p95_max_s } => p95_max_s.is_finite() && p95_max_s > 0.0,
            Predicate::Prohibit { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(GateError::InvalidGoal(self.id.clone()))
        }
    }

    fn is_prohibition(&self) -> bool {
        matches!(self.predicate, Predicate::Prohibit { .. })
    }
}

pub fn default_goals() -> Vec<SafetyGoal> {
    vec![
        SafetyGoal {
            id: "SG-FP".into(),
            hazardous_event: "False positive: spurious fail-safe trigger".into(),
            asil: Asil::B,
            predicate: Predicate::PrecisionAtLeast { threshold: 0.80 },
            mitigation: "debounce triggers".into(),
        },
        SafetyGoal {
            id: "SG-FN".into(),
            hazardous_event: "False negative: undetected hazard".into(),
            asil: Asil::D,
            predicate: Predicate::RecallAtLeast { threshold: 0.90 },
            mitigation: "redundant detection".into(),
        },
        SafetyGoal {
            id: "SG-LAT".into(),
            hazardous_event: "Excessive latency".into(),
            asil: Asil::B,
            predicate: Predicate::LatencyWithin { p95_max_s: 1.0 },
            mitigation: "watchdog monitor".into(),
        },
        SafetyGoal {
            id: "SG-NF4".into(),
            hazardous_event: "NF4 silent recall collapse (video)".into(),
            asil: Asil::D,
            predicate: Predicate::Prohibit {
                quantization: Quantization::NF4,
                modality: Modality::Video,
            },
            mitigation: "Prohibit NF4 in video path".into(),
        },
    ]
}

pub fn load_goals(path: &Path) -> Result<Vec<SafetyGoal>, GateError> {
    let text = std::fs::read_to_string(path).map_err(|e| GateError::Goals(format!("{}: {e}", path.display())))?;
    let goals: Vec<SafetyGoal> =
        serde_json::from_str(&text).map_err(|e| GateError::Goals(format!("{}: {e}", path.display())))?;
    goals.iter().try_for_each(SafetyGoal::validate)?;
    Ok(goals)
}

/// What is being deployed, as far as the gate is concerned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub quantization: Option<Quantization>,
    pub modality: Option<Modality>,
    /// Profile label, e.g. `BF16/video`.
    pub profile: Option<String>,
    pub n_min: u32,
    pub deadline_s: f64,
}

impl Deployment {
    /// Resolves the backend profile named in the config, if any.
    pub fn from_config(cfg: &ObserverConfig) -> Result<Self, GateError> {
        let profile = match &cfg.backend.profile {
            Some(spec) => Some(QuantProfile::load(spec).map_err(|e| GateError::Profile(e.to_string()))?),
            None => None,
        };
        Ok(Deployment {
            quantization: profile.as_ref().map(|p| p.name),
            modality: profile.as_ref().map(|p| p.modality),
            profile: profile.as_ref().map(QuantProfile::label),
            n_min: cfg.n_min,
            deadline_s: cfg.deadline_s,
        })
    }
}

#[derive(Debug, Error)]
pub enum GateError {
    #[error("report does not match config: {field} is {report} in the report but {config} in the config")]
    FingerprintMismatch {
        field: &'static str,
        report: String,
        config: String,
    },
    #[error("invalid safety goal {0}")]
    InvalidGoal(String),
    #[error("cannot read goals: {0}")]
    Goals(String),
    #[error("cannot resolve backend profile: {0}")]
    Profile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalVerdict {
    pub goal_id: String,
    pub asil: Asil,
    pub verdict: Verdict,
    pub measured: Option<f64>,
    pub threshold: Option<f64>,
    /// How far the measurement falls short of the threshold (positive on
    /// failure, in the metric's own unit).
    pub gap: Option<f64>,
    pub note: String,
    pub mitigation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub overall: Verdict,
    pub verdicts: Vec<GoalVerdict>,
    /// Failed ASIL-D goals.
    pub blocking: Vec<String>,
    pub deployment: Deployment,
    pub latency_rule: String,
}

impl GateReport {
    pub fn verdict(&self, goal_id: &str) -> Option<&GoalVerdict> {
        self.verdicts.iter().find(|v| v.goal_id == goal_id)
    }

    pub fn exit_code(&self) -> i32 {
        match self.overall {
            Verdict::Pass => 0,
            Verdict::Fail => 2,
        }
    }
}

const LATENCY_RULE: &str = "latency goal requires p95 total latency within the bound and zero deadline violations";

fn check_fingerprint(report: &MetricsReport, dep: &Deployment) -> Result<(), GateError> {
    let fp = &report.fingerprint;
    if let Some(n) = fp.n_min {
        if n != dep.n_min {
            return Err(GateError::FingerprintMismatch {
                field: "n_min",
                report: n.to_string(),
                config: dep.n_min.to_string(),
            });
        }
    }
    if let Some(d) = fp.deadline_s {
        if (d - dep.deadline_s).abs() > 1e-9 {
            return Err(GateError::FingerprintMismatch {
                field: "deadline_s",
                report: d.to_string(),
                config: dep.deadline_s.to_string(),
            });
        }
    }
    if let (Some(r), Some(c)) = (&fp.profile, &dep.profile) {
        if r != c {
            return Err(GateError::FingerprintMismatch {
                field: "profile",
                report: r.clone(),
                config: c.clone(),
            });
        }
    }
    Ok(())
}

fn at_least(goal: &SafetyGoal, score: Option<Score>, threshold: f64, what: &str) -> GoalVerdict {
    let measured = score.map(|s| s.value());
    let pass = measured.is_some_and(|m| m >= threshold);
    GoalVerdict {
        goal_id: goal.id.clone(),
        asil: goal.asil,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        measured,
        threshold: Some(threshold),
        gap: measured.map(|m| (threshold - m).max(0.0)),
        note: match measured {
            None => format!("{what} undefined (0/0); failing conservatively"),
            Some(m) => format!("{what} {:.1}% vs required {:.1}%", m * 100.0, threshold * 100.0),
        },
        mitigation: goal.mitigation.clone(),
    }
}

fn evaluate_goal(goal: &SafetyGoal, report: &MetricsReport, dep: &Deployment) -> GoalVerdict {
    match goal.predicate {
        Predicate::PrecisionAtLeast { threshold } => at_least(goal, report.scores.precision, threshold, "precision"),
        Predicate::RecallAtLeast { threshold } => at_least(goal, report.scores.recall, threshold, "recall"),
        Predicate::LatencyWithin { p95_max_s } => {
            let l = &report.latency;
            let pass = l.p95_s <= p95_max_s && l.violations == 0;
            GoalVerdict {
                goal_id: goal.id.clone(),
                asil: goal.asil,
                verdict: if pass { Verdict::Pass } else { Verdict::Fail },
                measured: Some(l.p95_s),
                threshold: Some(p95_max_s),
                gap: Some((l.p95_s - p95_max_s).max(0.0)),
                note: format!("p95 {:.3}s, {} deadline violations", l.p95_s, l.violations),
                mitigation: goal.mitigation.clone(),
            }
        }
        Predicate::Prohibit { quantization, modality } => {
            let (verdict, note) = match (dep.quantization, dep.modality) {
                (Some(q), Some(m)) if q == quantization && m == modality => {
                    (Verdict::Fail, format!("{q}/{m} is a prohibited configuration"))
                }
                (Some(q), Some(m)) => (Verdict::Pass, format!("{q}/{m} is not prohibited")),
                _ => (Verdict::Fail, "deployment quantization/modality unknown; failing conservatively".to_string()),
            };
            GoalVerdict {
                goal_id: goal.id.clone(),
                asil: goal.asil,
                verdict,
                measured: None,
                threshold: None,
                gap: None,
                note,
                mitigation: goal.mitigation.clone(),
            }
        }
    }
}

/// Evaluates every goal. Prohibitions come first and ignore the metrics.
pub fn evaluate(report: &MetricsReport, deployment: &Deployment, goals: &[SafetyGoal]) -> Result<GateReport, GateError> {
    goals.iter().try_for_each(SafetyGoal::validate)?;
    check_fingerprint(report, deployment)?;
    let ordered = goals
        .iter()
        .filter(|g| g.is_prohibition())
        .chain(goals.iter().filter(|g| !g.is_prohibition()));
    let verdicts: Vec<GoalVerdict> = ordered.map(|g| evaluate_goal(g, report, deployment)).collect();
    let overall = if verdicts.iter().all(|v| v.verdict == Verdict::Pass) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let blocking = verdicts
        .iter()
        .filter(|v| v.verdict == Verdict::Fail && v.asil == Asil::D)
        .map(|v| v.goal_id.clone())
        .collect();
    Ok(GateReport {
        overall,
        verdicts,
        blocking,
        deployment: deployment.clone(),
        latency_rule: LATENCY_RULE.to_string(),
    })
}

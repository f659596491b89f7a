//! Confusion matrices, exact ratio scores and latency statistics over
//! prediction logs.

use std::fmt::Write as _;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::time::Duration;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Label, WindowId};
use crate::orchestrator::log::PredictionRecord;
use crate::prompting::DecisionClass;
use crate::time;

/// Deadline assumed when neither the caller nor the log specifies one.
pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(1);

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("record {0} has no ground-truth label")]
    MissingGroundTruth(WindowId),
    #[error("prediction log is empty")]
    EmptyLog,
}

/// The 2×2 matrix plus side counters for answers that were not a committed
/// label. Side counts are already included in `fn`/`tn`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub unknowns: u64,
    pub unparseables: u64,
    pub timeouts: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionMatrix {
            tp,
            tn,
            fp,
            fn_,
            ..Default::default()
        }
    }

    pub fn scored(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Adds one scored decision.
    pub fn record(&mut self, gt: Label, decision: DecisionClass) {
        match (gt, decision) {
            (Label::Anomaly, DecisionClass::Anomaly) => self.tp += 1,
            (Label::Normal, DecisionClass::Anomaly) => self.fp += 1,
            (Label::Normal, _) => self.tn += 1,
            (Label::Anomaly, _) => self.fn_ += 1,
        }
        match decision {
            DecisionClass::Unknown => self.unknowns += 1,
            DecisionClass::Unparseable => self.unparseables += 1,
            DecisionClass::TimedOut => self.timeouts += 1,
            DecisionClass::Anomaly | DecisionClass::Normal => {}
        }
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, o: ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            unknowns: self.unknowns + o.unknowns,
            unparseables: self.unparseables + o.unparseables,
            timeouts: self.timeouts + o.timeouts,
        }
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: ConfusionMatrix) {
        *self = *self + o;
    }
}

impl Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = ConfusionMatrix>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::default(), Add::add)
    }
}

pub fn score_log<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> Result<ConfusionMatrix, MetricsError> {
    let mut m = ConfusionMatrix::default();
    for r in records {
        let gt = r.gt.ok_or_else(|| MetricsError::MissingGroundTruth(r.window_id()))?;
        m.record(gt, r.decision);
    }
    Ok(m)
}

/// An exact ratio in [0, 1]. Serialized with its float value for readers
/// that do not care about the fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Score(pub Ratio<u128>);

impl Score {
    fn of(num: u128, den: u128) -> Option<Score> {
        (den != 0).then(|| Score(Ratio::new(num, den)))
    }

    pub fn value(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    pub fn percent(&self) -> f64 {
        self.value() * 100.0
    }
}

#[derive(Serialize, Deserialize)]
struct ScoreRepr {
    num: u128,
    den: u128,
    value: f64,
}

impl Serialize for Score {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ScoreRepr {
            num: *self.0.numer(),
            den: *self.0.denom(),
            value: self.value(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = ScoreRepr::deserialize(d)?;
        Score::of(r.num, r.den).ok_or_else(|| serde::de::Error::custom("score with zero denominator"))
    }
}

/// Ratios over a matrix. `None` means 0/0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub precision: Option<Score>,
    pub recall: Option<Score>,
    pub f1: Option<Score>,
    pub accuracy: Option<Score>,
    pub specificity: Option<Score>,
    pub balanced_accuracy: Option<Score>,
}

pub fn compute_scores(m: &ConfusionMatrix) -> Scores {
    let (tp, tn, fp, fn_) = (m.tp as u128, m.tn as u128, m.fp as u128, m.fn_ as u128);
    let recall = Score::of(tp, tp + fn_);
    let specificity = Score::of(tn, tn + fp);
    let balanced_accuracy = match (recall, specificity) {
        (Some(r), Some(s)) => Some(Score((r.0 + s.0) / Ratio::from_integer(2))),
        _ => None,
    };
    Scores {
        precision: Score::of(tp, tp + fp),
        recall,
        f1: Score::of(2 * tp, 2 * tp + fp + fn_),
        accuracy: Score::of(tp + tn, tp + tn + fp + fn_),
        specificity,
        balanced_accuracy,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub max_s: f64,
    pub violations: u64,
    pub deadline_s: f64,
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p * n)`.
pub fn nearest_rank(sorted: &[Duration], p: Ratio<u64>) -> Option<Duration> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len() as u64;
    let rank = (p * Ratio::from_integer(n)).ceil().to_integer().clamp(1, n);
    Some(sorted[(rank - 1) as usize])
}

pub fn latency_stats<'a>(
    records: impl IntoIterator<Item = &'a PredictionRecord>,
    deadline: Duration,
) -> Result<LatencyStats, MetricsError> {
    let mut totals: Vec<Duration> = records.into_iter().map(|r| r.total).collect();
    if totals.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    totals.sort_unstable();
    let n = totals.len() as u128;
    let sum: u128 = totals.iter().map(Duration::as_nanos).sum();
    let mean = Duration::from_nanos(((sum + n / 2) / n) as u64);
    let pct = |num| nearest_rank(&totals, Ratio::new(num, 100)).unwrap_or_default();
    Ok(LatencyStats {
        mean_s: mean.as_secs_f64(),
        p50_s: pct(50).as_secs_f64(),
        p95_s: pct(95).as_secs_f64(),
        max_s: totals[totals.len() - 1].as_secs_f64(),
        violations: totals.iter().filter(|&&t| t > deadline).count() as u64,
        deadline_s: deadline.as_secs_f64(),
    })
}

/// Which run a report describes. Each field is set only when every record
/// in the log agrees on it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Fingerprint {
    pub prompt_hash: Option<String>,
    pub backend_id: Option<String>,
    pub profile: Option<String>,
    pub n_min: Option<u32>,
    pub deadline_s: Option<f64>,
}

fn common<T: PartialEq + Clone>(mut values: impl Iterator<Item = Option<T>>) -> Option<T> {
    let first = values.next()??;
    values.all(|v| v.as_ref() == Some(&first)).then_some(first)
}

impl Fingerprint {
    pub fn from_records(records: &[PredictionRecord]) -> Self {
        Fingerprint {
            prompt_hash: common(records.iter().map(|r| Some(r.prompt_hash.clone()))),
            backend_id: common(records.iter().map(|r| Some(r.backend_id.clone()))),
            profile: common(records.iter().map(|r| r.profile.clone())),
            n_min: common(records.iter().map(|r| r.n_min)),
            deadline_s: common(records.iter().map(|r| r.deadline_s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Row label used in tables.
    pub name: String,
    pub matrix: ConfusionMatrix,
    pub scores: Scores,
    pub latency: LatencyStats,
    pub fingerprint: Fingerprint,
}

/// Scores a whole log. The deadline for violation counting is `deadline`
/// if given, else the one recorded in the log, else [`DEFAULT_DEADLINE`].
pub fn build_report(
    name: &str,
    records: &[PredictionRecord],
    deadline: Option<Duration>,
) -> Result<MetricsReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let fingerprint = Fingerprint::from_records(records);
    let deadline = deadline
        .or_else(|| fingerprint.deadline_s.and_then(time::from_secs))
        .unwrap_or(DEFAULT_DEADLINE);
    let matrix = score_log(records)?;
    Ok(MetricsReport {
        name: name.to_string(),
        matrix,
        scores: compute_scores(&matrix),
        latency: latency_stats(records, deadline)?,
        fingerprint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" | "markdown_table" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format '{other}'")),
        }
    }
}

fn pct_cell(s: Option<Score>) -> String {
    s.map_or_else(|| "n/a".to_string(), |s| format!("{:.1}%", s.percent()))
}

/// One row per report, columns in the order of the published results table.
pub fn markdown_table(reports: &[MetricsReport]) -> String {
    let mut out = String::from(
        "| Config | TP | TN | FP | FN | Precision | Recall | F1 | Acc. | Latency | Specificity | Bal. Acc. |\n\
         |---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n",
    );
    for r in reports {
        let m = &r.matrix;
        let s = &r.scores;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {:.3}s | {} | {} |",
            r.name,
            m.tp,
            m.tn,
            m.fp,
            m.fn_,
            pct_cell(s.precision),
            pct_cell(s.recall),
            pct_cell(s.f1),
            pct_cell(s.accuracy),
            r.latency.mean_s,
            pct_cell(s.specificity),
            pct_cell(s.balanced_accuracy),
        );
    }
    out
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report).expect("report serializes");
            v.push(b'\n');
            v
        }
        ReportFormat::Markdown => markdown_table(std::slice::from_ref(report)).into_bytes(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(gt: Option<Label>, decision: DecisionClass, total_ms: u64) -> PredictionRecord {
        let total = Duration::from_millis(total_ms);
        PredictionRecord {
            clip_id: "c".into(),
            window_index: 0,
            gt,
            decision,
            z: u8::from(decision == DecisionClass::Anomaly),
            raw_text: String::new(),
            tokens_generated: 0,
            sense: Duration::ZERO,
            preprocess: Duration::ZERO,
            infer: total,
            post: Duration::ZERO,
            total,
            deadline_violated: false,
            prompt_hash: "p".into(),
            backend_id: "b".into(),
            profile: None,
            tool_version: None,
            config_hash: None,
            seed: None,
            n_min: None,
            deadline_s: None,
        }
    }

    #[test]
    fn scoring_rule() {
        use DecisionClass::*;
        let m = score_log(&[rec(Some(Label::Anomaly), TimedOut, 1500)]).unwrap();
        assert_eq!((m.fn_, m.timeouts, m.scored()), (1, 1, 1));
        let m = score_log(&[
            rec(Some(Label::Normal), Unknown, 1),
            rec(Some(Label::Normal), Unparseable, 1),
            rec(Some(Label::Anomaly), Unparseable, 1),
            rec(Some(Label::Normal), Anomaly, 1),
            rec(Some(Label::Anomaly), Anomaly, 1),
        ])
        .unwrap();
        assert_eq!(
            m,
            ConfusionMatrix {
                tp: 1,
                tn: 2,
                fp: 1,
                fn_: 1,
                unknowns: 1,
                unparseables: 2,
                timeouts: 0
            }
        );
        assert_eq!(score_log(&[]).unwrap(), ConfusionMatrix::default());
        assert!(matches!(
            score_log(&[rec(None, Normal, 1)]),
            Err(MetricsError::MissingGroundTruth(_))
        ));
    }

    #[test]
    fn zero_matrix_is_all_undefined() {
        assert_eq!(compute_scores(&ConfusionMatrix::default()), Scores::default());
    }

    #[test]
    fn fully_unparseable_run_has_zero_f1() {
        let mut m = ConfusionMatrix::default();
        for _ in 0..10 {
            m.record(Label::Anomaly, DecisionClass::Unparseable);
            m.record(Label::Normal, DecisionClass::Unparseable);
        }
        let s = compute_scores(&m);
        assert_eq!(s.f1.unwrap().value(), 0.0);
        assert_eq!(s.precision, None);
    }

    #[test]
    fn balanced_accuracy_is_exact() {
        // (51/66 + 96/180) / 2 computed by hand as one fraction.
        let s = compute_scores(&ConfusionMatrix::new(51, 96, 84, 15));
        let expected = Ratio::new(51u128 * 180 + 96 * 66, 2 * 66 * 180);
        assert_eq!(s.balanced_accuracy.unwrap().0, expected);
    }

    #[test]
    fn latency_statistics() {
        let recs: Vec<_> = [400, 600].iter().map(|&ms| rec(Some(Label::Normal), DecisionClass::Normal, ms)).collect();
        let l = latency_stats(&recs, DEFAULT_DEADLINE).unwrap();
        assert_eq!((l.mean_s, l.p50_s, l.p95_s, l.max_s), (0.5, 0.4, 0.6, 0.6));

        let recs: Vec<_> = (0..7).map(|_| rec(Some(Label::Normal), DecisionClass::Normal, 485)).collect();
        let l = latency_stats(&recs, DEFAULT_DEADLINE).unwrap();
        assert_eq!((l.mean_s, l.p50_s, l.p95_s, l.max_s, l.violations), (0.485, 0.485, 0.485, 0.485, 0));

        let recs: Vec<_> = (0..7).map(|_| rec(Some(Label::Normal), DecisionClass::Normal, 1330)).collect();
        assert_eq!(latency_stats(&recs, DEFAULT_DEADLINE).unwrap().violations, 7);

        assert_eq!(latency_stats(&[], DEFAULT_DEADLINE), Err(MetricsError::EmptyLog));
    }

    #[test]
    fn nearest_rank_matches_definition() {
        let v: Vec<Duration> = (1..=20).map(Duration::from_secs).collect();
        assert_eq!(nearest_rank(&v, Ratio::new(95, 100)), Some(Duration::from_secs(19)));
        assert_eq!(nearest_rank(&v, Ratio::new(50, 100)), Some(Duration::from_secs(10)));
        assert_eq!(nearest_rank(&v, Ratio::new(0, 100)), Some(Duration::from_secs(1)));
        assert_eq!(nearest_rank(&v[..1], Ratio::new(95, 100)), Some(Duration::from_secs(1)));
    }

    #[test]
    fn fingerprint_requires_agreement() {
        let mut a = rec(Some(Label::Normal), DecisionClass::Normal, 1);
        a.n_min = Some(2);
        let mut b = a.clone();
        b.backend_id = "other".into();
        let fp = Fingerprint::from_records(&[a, b]);
        assert_eq!(fp.n_min, Some(2));
        assert_eq!(fp.backend_id, None);
        assert_eq!(fp.prompt_hash.as_deref(), Some("p"));
    }

    #[test]
    fn score_json_round_trip() {
        let s = compute_scores(&ConfusionMatrix::new(806, 279, 168, 909));
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Scores>(&json).unwrap(), s);
    }

    #[test]
    fn report_json_round_trip() {
        let log = vec![
            rec(Some(Label::Anomaly), DecisionClass::Anomaly, 400),
            rec(Some(Label::Normal), DecisionClass::Anomaly, 1200),
            rec(Some(Label::Normal), DecisionClass::Normal, 300),
        ];
        let report = build_report("r", &log, None).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(serde_json::from_str::<MetricsReport>(&json).unwrap(), report);
    }

    fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
        (0u64..5000, 0u64..5000, 0u64..5000, 0u64..5000).prop_map(|(a, b, c, d)| ConfusionMatrix::new(a, b, c, d))
    }

    proptest! {
        #[test]
        fn f1_is_harmonic_mean(m in matrix()) {
            let s = compute_scores(&m);
            if let (Some(p), Some(r), Some(f1)) = (s.precision, s.recall, s.f1) {
                let sum = p.0 + r.0;
                if sum != Ratio::from_integer(0) {
                    prop_assert_eq!(f1.0, Ratio::from_integer(2) * p.0 * r.0 / sum);
                }
            }
        }

        #[test]
        fn monoid_laws(a in matrix(), b in matrix(), c in matrix()) {
            prop_assert_eq!(a + b, b + a);
            prop_assert_eq!((a + b) + c, a + (b + c));
            prop_assert_eq!(a + ConfusionMatrix::default(), a);
        }

        #[test]
        fn recall_and_precision_are_monotone(m in matrix()) {
            let s = compute_scores(&m);
            let more_tp = compute_scores(&ConfusionMatrix { tp: m.tp + 1, ..m });
            if let Some(r) = s.recall {
                prop_assert!(more_tp.recall.unwrap().0 >= r.0);
            }
            let more_fp = compute_scores(&ConfusionMatrix { fp: m.fp + 1, ..m });
            if let Some(p) = s.precision {
                prop_assert!(more_fp.precision.unwrap().0 <= p.0);
            }
        }
    }
}

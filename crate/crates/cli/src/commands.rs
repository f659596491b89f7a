//! The four subcommands. Each returns the process exit code on success;
//! operational failures surface as errors and exit with 1.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use semobs_core::backend::{Backend, QuantProfile, RemoteBackend, ReplayBackend, StochasticBackend};
use semobs_core::gate::{self, Deployment, GateReport};
use semobs_core::ingest::{load_manifest, sample_windows, ManifestFormat, Window};
use semobs_core::metrics::{
    build_report, compute_scores, emit_report, latency_stats, markdown_table, score_log, ConfusionMatrix,
    Fingerprint, MetricsError, MetricsReport, ReportFormat, DEFAULT_DEADLINE,
};
use semobs_core::orchestrator::log::{read_prediction_log, write_jsonl, HandoffRecord, PredictionRecord, Provenance};
use semobs_core::orchestrator::{run_observer, BackendKind, ClockMode, ObserverConfig, RunStats};
use semobs_core::prompting::{build_prompt_from, PromptSpec, PromptTemplate};
use semobs_core::time;
use semobs_core::TOOL_VERSION;
use serde::Serialize;

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const HANDOFFS_FILE: &str = "handoffs.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";

/// Loads a manifest and cuts every clip into windows. Clips too short for a
/// single window are skipped with a warning.
pub fn load_windows(manifest: &Path, cfg: &ObserverConfig) -> Result<(usize, Vec<Window>, usize)> {
    let file = File::open(manifest).with_context(|| format!("cannot open manifest {}", manifest.display()))?;
    let clips = load_manifest(BufReader::new(file), ManifestFormat::from_path(manifest))
        .with_context(|| format!("invalid manifest {}", manifest.display()))?;
    let mut windows = Vec::new();
    let mut short = 0;
    for clip in &clips {
        let sampled = sample_windows(clip, &cfg.sampling);
        if let Some(w) = sampled.warning {
            log::warn!("{w}");
            short += 1;
        }
        windows.extend(sampled.windows);
    }
    Ok((clips.len(), windows, short))
}

pub fn build_prompt_spec(cfg: &ObserverConfig) -> Result<PromptSpec> {
    let template = match &cfg.prompt.template_path {
        Some(p) => PromptTemplate::from_file(cfg.prompt.tier, p)?,
        None => PromptTemplate::builtin(cfg.prompt.tier),
    };
    let spec = build_prompt_from(&template, &cfg.prompt.context)?;
    Ok(match cfg.prompt.max_new_tokens {
        Some(n) => spec.with_max_new_tokens(n)?,
        None => spec,
    })
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub tool_version: String,
    pub config_hash: String,
    pub prompt_hash: String,
    pub seed: u64,
    pub n_min: u32,
    pub deadline_s: f64,
    pub backend_id: String,
    pub clips: usize,
    pub clips_too_short: usize,
    pub stats: RunStats,
    pub metrics: Option<MetricsReport>,
}

/// Runs the observer and writes every artifact into `out`.
pub fn execute_run(cfg: &ObserverConfig, manifest: &Path, backend: Arc<dyn Backend>, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let prompt = build_prompt_spec(cfg)?;
    let (clips, windows, short) = load_windows(manifest, cfg)?;
    let backend_id = backend.id().to_string();
    let prov = Provenance {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: cfg.config_hash(),
        prompt_hash: prompt.template_hash.clone(),
        seed: cfg.seed,
        n_min: cfg.n_min,
        deadline_s: cfg.deadline(),
    };
    let output = run_observer(&windows, cfg, &prompt, backend)?;

    let predictions: Vec<PredictionRecord> =
        output.decisions.iter().map(|d| PredictionRecord::from_decision(d, &prov)).collect();
    let handoffs: Vec<HandoffRecord> = output.handoffs.iter().map(|h| HandoffRecord::from_event(h, &prov)).collect();

    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    write_jsonl(&predictions, BufWriter::new(File::create(out.join(PREDICTIONS_FILE))?))?;
    write_jsonl(&handoffs, BufWriter::new(File::create(out.join(HANDOFFS_FILE))?))?;
    write_pretty(&out.join(CONFIG_FILE), cfg)?;

    let metrics = match build_report("run", &predictions, Some(cfg.deadline())) {
        Ok(r) => {
            fs::write(out.join(REPORT_FILE), emit_report(&r, ReportFormat::Json))?;
            Some(r)
        }
        Err(MetricsError::EmptyLog) => None,
        Err(e @ MetricsError::MissingGroundTruth(_)) => {
            log::warn!("skipping metrics: {e}");
            None
        }
    };

    let summary = RunSummary {
        tool_version: prov.tool_version,
        config_hash: prov.config_hash,
        prompt_hash: prov.prompt_hash,
        seed: prov.seed,
        n_min: prov.n_min,
        deadline_s: cfg.deadline_s,
        backend_id,
        clips,
        clips_too_short: short,
        stats: output.stats,
        metrics,
    };
    write_pretty(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn print_summary(s: &RunSummary, out: &Path) {
    let st = &s.stats;
    println!(
        "{} windows from {} clips: {} processed, {} dropped, {} timed out, {} deadline violations, {} handoffs",
        st.windows_total, s.clips, st.processed, st.dropped, st.timeouts, st.deadline_violations, st.handoffs
    );
    if let Some(m) = &s.metrics {
        let pct = |x: Option<semobs_core::metrics::Score>| x.map_or("n/a".to_string(), |v| format!("{:.1}%", v.percent()));
        println!(
            "precision {} recall {} F1 {} (tp {} tn {} fp {} fn {})",
            pct(m.scores.precision),
            pct(m.scores.recall),
            pct(m.scores.f1),
            m.matrix.tp,
            m.matrix.tn,
            m.matrix.fp,
            m.matrix.fn_
        );
    }
    println!("artifacts written to {}", out.display());
}

pub fn simulate(cfg: &ObserverConfig, manifest: &Path, out: &Path) -> Result<i32> {
    if cfg.clock != ClockMode::Simulated {
        bail!("simulate runs in simulated time; set clock = \"simulated\" or use run-remote");
    }
    let backend: Arc<dyn Backend> = match cfg.backend.kind {
        BackendKind::Stochastic => {
            let spec = cfg
                .backend
                .profile
                .as_deref()
                .ok_or_else(|| anyhow!("stochastic backend needs a profile (--profile)"))?;
            Arc::new(StochasticBackend::new(QuantProfile::load(spec)?, cfg.seed))
        }
        BackendKind::Replay => {
            let path = cfg
                .backend
                .replay_log
                .as_deref()
                .ok_or_else(|| anyhow!("replay backend needs backend.replay_log"))?;
            Arc::new(ReplayBackend::from_records(&read_log(path)?))
        }
        BackendKind::Remote => bail!("remote backends run in wall-clock time; use run-remote"),
    };
    let summary = execute_run(cfg, manifest, backend, out)?;
    print_summary(&summary, out);
    Ok(0)
}

pub fn run_remote(cfg: &ObserverConfig, manifest: &Path, out: &Path) -> Result<i32> {
    let endpoint = cfg
        .backend
        .endpoint
        .clone()
        .ok_or_else(|| anyhow!("run-remote needs an endpoint (--endpoint)"))?;
    let mut cfg = cfg.clone();
    cfg.backend.kind = BackendKind::Remote;
    cfg.clock = ClockMode::WallClock;
    let timeout = match cfg.backend.timeout_s {
        Some(t) => time::from_secs(t).ok_or_else(|| anyhow!("backend.timeout_s must be nonnegative"))?,
        None => cfg.deadline() * 2,
    };
    let backend = RemoteBackend::new(&endpoint, timeout);
    backend.probe().with_context(|| format!("endpoint {endpoint} is not reachable"))?;
    let summary = execute_run(&cfg, manifest, Arc::new(backend), out)?;
    print_summary(&summary, out);
    Ok(0)
}

pub fn read_log(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = File::open(path).with_context(|| format!("cannot open log {}", path.display()))?;
    read_prediction_log(BufReader::new(file)).with_context(|| format!("invalid log {}", path.display()))
}

/// Records scored per worker before matrices are merged.
const SHARD_SIZE: usize = 4096;

/// Scores several logs as one run. Logs are read and scored in parallel
/// shards whose matrices are summed.
pub fn evaluate_logs(name: &str, paths: &[PathBuf], deadline: Option<Duration>) -> Result<MetricsReport> {
    let logs: Vec<Vec<PredictionRecord>> = paths.par_iter().map(|p| read_log(p)).collect::<Result<_>>()?;
    let records: Vec<PredictionRecord> = logs.into_iter().flatten().collect();
    if records.is_empty() {
        return Err(MetricsError::EmptyLog.into());
    }
    let matrix = records
        .par_chunks(SHARD_SIZE)
        .map(score_log)
        .try_reduce(ConfusionMatrix::default, |a, b| Ok(a + b))?;
    let fingerprint = Fingerprint::from_records(&records);
    let deadline = deadline
        .or_else(|| fingerprint.deadline_s.and_then(time::from_secs))
        .unwrap_or(DEFAULT_DEADLINE);
    Ok(MetricsReport {
        name: name.to_string(),
        matrix,
        scores: compute_scores(&matrix),
        latency: latency_stats(&records, deadline)?,
        fingerprint,
    })
}

pub fn evaluate(
    paths: &[PathBuf],
    per_log: bool,
    deadline: Option<Duration>,
    format: ReportFormat,
    out: Option<&Path>,
) -> Result<i32> {
    if paths.is_empty() {
        bail!("no prediction logs given");
    }
    let stem = |p: &Path| p.file_stem().map_or("log".into(), |s| s.to_string_lossy().into_owned());
    let bytes = if per_log {
        let reports: Vec<MetricsReport> = paths
            .iter()
            .map(|p| evaluate_logs(&stem(p), std::slice::from_ref(p), deadline))
            .collect::<Result<_>>()?;
        match format {
            ReportFormat::Markdown => markdown_table(&reports).into_bytes(),
            ReportFormat::Json => {
                let mut v = serde_json::to_vec_pretty(&reports)?;
                v.push(b'\n');
                v
            }
        }
    } else {
        let name = if paths.len() == 1 { stem(&paths[0]) } else { "combined".to_string() };
        emit_report(&evaluate_logs(&name, paths, deadline)?, format)
    };
    write_output(&bytes, out)?;
    Ok(0)
}

fn write_output(bytes: &[u8], out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("cannot write {}", p.display())),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

pub fn load_report(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read report {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid report {}", path.display()))
}

pub fn run_gate(report: &MetricsReport, cfg: &ObserverConfig, goals: Option<&Path>) -> Result<GateReport> {
    let goals = match goals {
        Some(p) => gate::load_goals(p)?,
        None => gate::default_goals(),
    };
    let deployment = Deployment::from_config(cfg)?;
    Ok(gate::evaluate(report, &deployment, &goals)?)
}

fn gate_markdown(g: &GateReport) -> String {
    let mut s = format!("Gate: {}\n\n| Goal | ASIL | Verdict | Measured | Threshold | Gap | Note |\n|---|---|---|---:|---:|---:|---|\n", g.overall);
    let num = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.4}"));
    for v in &g.verdicts {
        s.push_str(&format!(
            "| {} | {:?} | {} | {} | {} | {} | {} |\n",
            v.goal_id,
            v.asil,
            v.verdict,
            num(v.measured),
            num(v.threshold),
            num(v.gap),
            v.note
        ));
    }
    if !g.blocking.is_empty() {
        s.push_str(&format!("\nBlocking ASIL-D goals: {}\n", g.blocking.join(", ")));
    }
    s.push_str(&format!("\nNote: {}\n", g.latency_rule));
    s
}

pub fn gate(report: &Path, cfg: &ObserverConfig, goals: Option<&Path>, format: ReportFormat, out: Option<&Path>) -> Result<i32> {
    let report = load_report(report)?;
    let g = run_gate(&report, cfg, goals)?;
    let bytes = match format {
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(&g)?;
            v.push(b'\n');
            v
        }
        ReportFormat::Markdown => gate_markdown(&g).into_bytes(),
    };
    write_output(&bytes, out)?;
    Ok(g.exit_code())
}

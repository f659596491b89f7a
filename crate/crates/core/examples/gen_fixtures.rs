//! Regenerates the bundled fixtures.
//!
//! Usage: cargo run -p semobs-core --example gen_fixtures [-- OUT_DIR]
//! (defaults to the workspace `fixtures/` directory).

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use semobs_core::backend::{QuantProfile, BUILTIN_PROFILES};
use semobs_core::fixtures::{benchmark_config, benchmark_log, benchmark_rows, synthetic_manifest, write_manifest_csv, ManifestSpec};
use semobs_core::metrics::{build_report, emit_report, markdown_table, ReportFormat};
use semobs_core::orchestrator::log::write_jsonl;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    for sub in ["logs", "manifests", "profiles", "configs", "golden"] {
        fs::create_dir_all(out.join(sub))?;
    }

    let mut reports = Vec::new();
    for row in benchmark_rows() {
        let log = benchmark_log(&row);
        write_jsonl(&log, BufWriter::new(File::create(out.join("logs").join(format!("{}.jsonl", row.stem)))?))?;
        let cfg = serde_json::to_string_pretty(&benchmark_config(&row))?;
        fs::write(out.join("configs").join(format!("{}.json", row.stem)), cfg + "\n")?;
        let report = build_report(row.stem, &log, None)?;
        fs::write(
            out.join("golden").join(format!("{}.json", row.stem)),
            emit_report(&report, ReportFormat::Json),
        )?;
        reports.push(report);
    }
    fs::write(out.join("golden").join("benchmark_table.md"), markdown_table(&reports))?;

    for (key, ..) in BUILTIN_PROFILES {
        let profile = QuantProfile::builtin(key).expect("built-in");
        let json = profile.to_json().expect("built from counts");
        fs::write(out.join("profiles").join(format!("{key}.json")), json + "\n")?;
    }

    let frames = synthetic_manifest(&ManifestSpec::default());
    write_manifest_csv(&frames, BufWriter::new(File::create(out.join("manifests").join("synthetic_224.csv"))?))?;
    println!("fixtures written to {}", out.display());
    Ok(())
}

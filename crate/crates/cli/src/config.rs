//! Config loading and override precedence: flags > environment > file >
//! built-in defaults. Clap resolves flag-vs-env; [`Overrides::apply`] lays
//! the result over the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use semobs_core::orchestrator::{BackendKind, ObserverConfig};

/// Reads an observer config. `.json` files are parsed as JSON, anything else
/// as TOML. Missing keys take their defaults.
pub fn load_config(path: &Path) -> Result<ObserverConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let cfg = if is_json {
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
    };
    Ok(cfg)
}

/// Values supplied on the command line or through `SEMOBS_*` variables.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub profile: Option<String>,
    pub seed: Option<u64>,
    pub endpoint: Option<String>,
    pub replay_log: Option<PathBuf>,
    pub n_min: Option<u32>,
    pub deadline_s: Option<f64>,
    pub rate_hz: Option<f64>,
    pub no_pacing: bool,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ObserverConfig) -> ObserverConfig {
        if let Some(p) = &self.profile {
            cfg.backend.profile = Some(p.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = &self.endpoint {
            cfg.backend.endpoint = Some(e.clone());
        }
        if let Some(r) = &self.replay_log {
            cfg.backend.kind = BackendKind::Replay;
            cfg.backend.replay_log = Some(r.clone());
        }
        if let Some(n) = self.n_min {
            cfg.n_min = n;
        }
        if let Some(d) = self.deadline_s {
            cfg.deadline_s = d;
        }
        if let Some(r) = self.rate_hz {
            cfg.rate_hz = r;
        }
        if self.no_pacing {
            cfg.pacing = false;
        }
        cfg
    }
}

pub fn resolve(config: Option<&Path>, overrides: &Overrides) -> Result<ObserverConfig> {
    let base = match config {
        Some(p) => load_config(p)?,
        None => ObserverConfig::default(),
    };
    let cfg = overrides.apply(base);
    if cfg.n_min == 0 {
        bail!("n_min must be at least 1");
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn toml_and_json_configs_agree() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        std::fs::File::create(&toml_path)
            .unwrap()
            .write_all(b"n_min = 3\ndeadline_s = 0.8\n[backend]\nprofile = \"int8-video\"\n")
            .unwrap();
        let json_path = dir.path().join("c.json");
        std::fs::write(
            &json_path,
            r#"{"n_min": 3, "deadline_s": 0.8, "backend": {"profile": "int8-video"}}"#,
        )
        .unwrap();
        let a = load_config(&toml_path).unwrap();
        assert_eq!(a, load_config(&json_path).unwrap());
        assert_eq!(a.n_min, 3);
        assert_eq!(a.rate_hz, 1.0);
    }

    #[test]
    fn errors_name_the_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "n_min = 2\nrate_hz = \"fast\"\n").unwrap();
        let msg = format!("{:#}", load_config(&path).unwrap_err());
        assert!(msg.contains("bad.toml"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn overrides_win_over_file() {
        let o = Overrides {
            seed: Some(9),
            profile: Some("nf4-video".into()),
            ..Overrides::default()
        };
        let cfg = o.apply(ObserverConfig {
            seed: 1,
            ..ObserverConfig::default()
        });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.backend.profile.as_deref(), Some("nf4-video"));
    }
}

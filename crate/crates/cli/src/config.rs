use std::path::{Path, PathBuf};

use eviprompt::metrics::Method;
use eviprompt::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const BRIDGE_URL_ENV: &str = "EVIPROMPT_BRIDGE_URL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// Dataset manifest; required by `eval` and `ablate`, optional for `run`.
    pub manifest: Option<PathBuf>,
    /// `run` without a manifest: every PNG in this directory is a target.
    pub input_dir: Option<PathBuf>,
    pub reference_image: Option<PathBuf>,
    pub reference_mask: Option<PathBuf>,
    pub class_id: u8,
    pub output_dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            input_dir: None,
            reference_image: None,
            reference_mask: None,
            class_id: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub nsd_tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { nsd_tolerance: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeConfig {
    pub connect_timeout_secs: f64,
    pub request_timeout_secs: f64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            connect_timeout_secs: 5.0,
            request_timeout_secs: 300.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// `"mock"` or a bridge base URL.
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub io: IoConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub bridge: BridgeConfig,
}

fn default_backend() -> String {
    "mock".into()
}

fn default_method() -> Method {
    Method::Eviprompt
}

fn default_jobs() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            backend: default_backend(),
            method: default_method(),
            jobs: default_jobs(),
            io: IoConfig::default(),
            pipeline: PipelineConfig::default(),
            eval: EvalConfig::default(),
            bridge: BridgeConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub backend: Option<String>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

/// Fields that determine outputs; `jobs` and paths are excluded.
#[derive(Serialize)]
struct HashView<'a> {
    schema_version: u32,
    backend: &'a str,
    method: Method,
    pipeline: &'a PipelineConfig,
    eval: &'a EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Loads the file, resolving relative I/O paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let io = &mut cfg.io;
        for p in [&mut io.manifest, &mut io.input_dir, &mut io.reference_image, &mut io.reference_mask]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if io.output_dir.is_relative() {
            io.output_dir = base.join(&io.output_dir);
        }
        Ok(cfg)
    }

    /// Applies the bridge URL environment variable, then command-line flags.
    pub fn apply(&mut self, env_backend: Option<String>, o: &Overrides) {
        if let Some(url) = env_backend.filter(|s| !s.is_empty()) {
            self.backend = url;
        }
        if let Some(b) = &o.backend {
            self.backend = b.clone();
        }
        if let Some(s) = o.seed {
            self.pipeline.seed = s;
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        if let Some(d) = &o.output_dir {
            self.io.output_dir = d.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        if self.backend != "mock" && !self.backend.starts_with("http://") && !self.backend.starts_with("https://") {
            return Err(CliError::Config(format!(
                "backend must be \"mock\" or an http(s) URL, got {:?}",
                self.backend
            )));
        }
        if !(self.eval.nsd_tolerance >= 0.0) {
            return Err(CliError::Config("eval.nsd_tolerance must be non-negative".into()));
        }
        self.pipeline
            .validate()
            .map_err(|e| CliError::Config(format!("pipeline: {e}")))
    }

    /// Hex SHA-256 of the output-determining fields.
    pub fn hash(&self) -> String {
        let view = HashView {
            schema_version: self.schema_version,
            backend: &self.backend,
            method: self.method,
            pipeline: &self.pipeline,
            eval: &self.eval,
        };
        let json = serde_json::to_vec(&view).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use eviprompt::perturbation::GridLayout;

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = RunConfig::from_toml("schema_version = 1\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn partial_tables_fill_defaults() {
        let cfg = RunConfig::from_toml("schema_version = 1\n[pipeline.layout]\ntile_size = 256\n").unwrap();
        assert_eq!(cfg.pipeline.layout, GridLayout::new(256));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml("schema_version = 1\n[pipeline]\npatch_sise = 4\n").unwrap_err();
        assert!(err.to_string().contains("patch_sise"), "{err}");
        let err = RunConfig::from_toml("schema_version = 1\nbogus = true\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!(RunConfig::from_toml("backend = \"mock\"\n").is_err());
        assert!(RunConfig::from_toml("schema_version = 2\n").is_err());
    }

    #[test]
    fn precedence_and_hash() {
        let mut cfg = RunConfig::default();
        let h0 = cfg.hash();
        cfg.apply(
            Some("http://env:1".into()),
            &Overrides {
                seed: Some(7),
                jobs: Some(4),
                ..Default::default()
            },
        );
        assert_eq!(cfg.backend, "http://env:1");
        assert_eq!(cfg.pipeline.seed, 7);
        assert_ne!(cfg.hash(), h0);
        cfg.apply(
            Some("http://env:1".into()),
            &Overrides {
                backend: Some("mock".into()),
                seed: Some(42),
                ..Default::default()
            },
        );
        assert_eq!(cfg.backend, "mock");
        // jobs does not enter the hash
        assert_eq!(cfg.hash(), h0);
        assert_eq!(h0.len(), 64);
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.backend = "ftp://x".into();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.pipeline.patch_size = 0;
        assert!(cfg.validate().is_err());
    }
}

//! Run configuration loaded from TOML. Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendConfig, BackendKind, Strategy};
use crate::cbd::{CbdOptions, PoolingRule};
use crate::collector::DEFAULT_N_PER_CELL;
use crate::schema::{ContextSetting, OptionOrder};
use crate::stats::DEFAULT_KL_EPSILON;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
}

fn field(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiConfig {
    pub k: usize,
    pub folds: usize,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self { k: 3, folds: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbdConfig {
    /// `seed` is always derived from the root seed.
    #[serde(flatten)]
    pub options: CbdOptions,
    pub pooling: PoolingRule,
}

impl Default for CbdConfig {
    fn default() -> Self {
        Self {
            options: CbdOptions::default(),
            pooling: PoolingRule::Either,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: PathBuf,
    pub norms: Option<PathBuf>,
    pub norms_aliases: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub settings: Vec<ContextSetting>,
    pub orders: Vec<OptionOrder>,
    pub n_per_cell: u32,
    pub kl_epsilon: f64,
    pub histogram_bins: usize,
    pub spearman_permutations: usize,
    pub metaprompt_per_question: u32,
    pub mi: MiConfig,
    pub cbd: CbdConfig,
    pub backend: BackendConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: PathBuf::from("schema.csv"),
            norms: None,
            norms_aliases: None,
            output_dir: PathBuf::from("run"),
            seed: 0,
            settings: ContextSetting::ALL.to_vec(),
            orders: OptionOrder::ALL.to_vec(),
            n_per_cell: DEFAULT_N_PER_CELL,
            kl_epsilon: DEFAULT_KL_EPSILON,
            histogram_bins: 20,
            spearman_permutations: 2000,
            metaprompt_per_question: 10,
            mi: MiConfig::default(),
            cbd: CbdConfig::default(),
            backend: BackendConfig::default(),
        }
    }
}

impl RunConfig {
    /// Read, resolve and validate a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|message| ConfigError::Parse {
            path: path.display().to_string(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() {
            Path::new(".")
        } else {
            base
        };
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Make relative paths absolute against `base` and fill seeds derived
    /// from the root seed.
    pub fn resolve(&mut self, base: &Path) {
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut self.schema);
        abs(&mut self.output_dir);
        if let Some(p) = self.norms.as_mut() {
            abs(p);
        }
        if let Some(p) = self.norms_aliases.as_mut() {
            abs(p);
        }
        resolve_strategy(&mut self.backend.mock.strategy, base, self.norms.as_deref());
        if self.backend.kind != BackendKind::HttpChat && self.backend.params.seed.is_none() {
            self.backend.params.seed = Some(crate::seed::substream(self.seed, "mocks"));
        }
        self.cbd.options.seed = crate::seed::substream(self.seed, "bootstrap");
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.schema.is_file() {
            return Err(field("schema", format!("{} does not exist", self.schema.display())));
        }
        for (name, p) in [("norms", &self.norms), ("norms_aliases", &self.norms_aliases)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(field(name, format!("{} does not exist", p.display())));
                }
            }
        }
        if self.settings.is_empty() {
            return Err(field("settings", "must list at least one setting"));
        }
        if self.orders.is_empty() {
            return Err(field("orders", "must list at least one order"));
        }
        if self.n_per_cell == 0 {
            return Err(field("n_per_cell", "must be >= 1"));
        }
        if !(self.kl_epsilon >= 0.0) {
            return Err(field("kl_epsilon", "must be >= 0"));
        }
        if self.histogram_bins == 0 {
            return Err(field("histogram_bins", "must be >= 1"));
        }
        if self.mi.k == 0 {
            return Err(field("mi.k", "must be >= 1"));
        }
        if self.mi.folds < 2 {
            return Err(field("mi.folds", "must be >= 2"));
        }
        self.cbd.options.validate().map_err(|e| field("cbd", e.to_string()))?;
        self.backend.validate().map_err(|e| field("backend", e.to_string()))?;
        Ok(())
    }

    pub fn mi_seed(&self) -> u64 {
        crate::seed::substream(self.seed, "mi_noise")
    }

    pub fn spearman_seed(&self) -> u64 {
        crate::seed::substream(self.seed, "spearman")
    }

    /// Hash of the whole resolved config.
    pub fn config_hash(&self) -> String {
        crate::seed::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Hash of the fields that determine what gets collected; analysis
    /// settings can change without invalidating a log.
    pub fn collection_hash(&self) -> String {
        let key = serde_json::json!({
            "backend": self.backend,
            "settings": self.settings,
            "orders": self.orders,
            "n_per_cell": self.n_per_cell,
        });
        crate::seed::sha256_hex(key.to_string().as_bytes())
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

fn resolve_strategy(strategy: &mut Strategy, base: &Path, run_norms: Option<&Path>) {
    match strategy {
        Strategy::StereotypeFollower {
            norms_path,
            ratings,
            ..
        } => match norms_path {
            Some(p) if p.is_relative() => *p = base.join(&*p),
            None if ratings.is_empty() => *norms_path = run_norms.map(Path::to_path_buf),
            _ => {}
        },
        Strategy::Composite {
            unprimed,
            primed,
            null,
        } => {
            resolve_strategy(unprimed, base, run_norms);
            resolve_strategy(primed, base, run_norms);
            if let Some(n) = null {
                resolve_strategy(n, base, run_norms);
            }
        }
        _ => {}
    }
}

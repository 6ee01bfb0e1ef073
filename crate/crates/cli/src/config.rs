use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sigtrust::baselines::BadRankConfig;
use sigtrust::features::SvdConfig;
use sigtrust::graph::IngestConfig;
use sigtrust::labeling::SeedConfig;
use sigtrust::model::{AblationKind, ModelConfig};
use sigtrust::training::{LossConfig, TrainConfig};

pub const DATA_DIR_ENV: &str = "SIGTRUST_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory holding the raw edge list.
    pub data_dir: PathBuf,
    /// Edge list file name, relative to `data_dir` unless absolute.
    pub edges: PathBuf,
    /// Where every command reads and writes its artifacts.
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: PathBuf::from("data"),
            edges: PathBuf::from("soc-sign-bitcoinalpha.csv"),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSettings {
    pub lowest_pct: f64,
    pub badrank: BadRankConfig,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        BaselineSettings {
            lowest_pct: 0.05,
            badrank: BadRankConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSettings {
    pub variants: Vec<AblationKind>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            variants: AblationKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub labels: SeedConfig,
    pub features: SvdConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub baselines: BaselineSettings,
    pub ablation: AblationSettings,
}

impl RunConfig {
    /// Reads the optional TOML file, applies `key=value` overrides, then the
    /// data directory environment variable.
    pub fn load(
        path: Option<&Path>,
        overrides: &[String],
        data_dir_env: Option<PathBuf>,
    ) -> Result<Self> {
        let Some(p) = path else {
            return Self::from_toml("", overrides, data_dir_env);
        };
        let text = std::fs::read_to_string(p).map_err(|e| sigtrust::Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text, overrides, data_dir_env)
            .with_context(|| format!("in {}", p.display()))
    }

    /// Same as [`RunConfig::load`] with the file contents already in memory.
    pub fn from_toml(
        text: &str,
        overrides: &[String],
        data_dir_env: Option<PathBuf>,
    ) -> Result<Self> {
        let mut table = text
            .parse::<toml::Table>()
            .map_err(|e| sigtrust::Error::Config(e.to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| sigtrust::Error::Config(e.to_string()))?;
        if let Some(dir) = data_dir_env {
            cfg.paths.data_dir = dir;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        if self.labels.k == 0 {
            return Err(sigtrust::Error::Config("labels.k must be at least 1".into()).into());
        }
        if !(self.baselines.lowest_pct > 0.0 && self.baselines.lowest_pct < 1.0) {
            return Err(
                sigtrust::Error::Config("baselines.lowest_pct must be in (0, 1)".into()).into(),
            );
        }
        if self.train.model_seeds.is_empty() {
            return Err(
                sigtrust::Error::Config("train.model_seeds must not be empty".into()).into(),
            );
        }
        if self.ablation.variants.is_empty() {
            return Err(
                sigtrust::Error::Config("ablation.variants must not be empty".into()).into(),
            );
        }
        Ok(())
    }

    pub fn edges_path(&self) -> PathBuf {
        if self.paths.edges.is_absolute() {
            self.paths.edges.clone()
        } else {
            self.paths.data_dir.join(&self.paths.edges)
        }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a
/// bare string.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let Some((key, raw)) = item.split_once('=') else {
        bail!(sigtrust::Error::Config(format!(
            "override {item:?} is not key=value"
        )));
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!(sigtrust::Error::Config(format!("bad override key {key:?}")));
    }
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = match entry {
            toml::Value::Table(t) => t,
            _ => bail!(sigtrust::Error::Config(format!(
                "override {key:?} descends into a non-table"
            ))),
        };
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

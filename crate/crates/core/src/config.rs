//! TOML run configuration with `key=value` overrides.
//!
//! ```toml
//! seed = 0
//! output_dir = "runs/late"
//!
//! [model]
//! fusion = "late"
//!
//! [loss]
//! lambda = 1.0
//!
//! [train]
//! max_epochs = 40
//!
//! [data]
//! manifest = "data/manifest.txt"
//! folds = 3
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blocks::MdbNetConfig;
use crate::data::SyntheticSceneSpec;
use crate::losses::CombinedLossConfig;
use crate::train::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override `{0}`: {1}")]
    Override(String, String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset manifest; relative paths resolve against the working directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Scenes written by `gen`.
    pub scenes: usize,
    pub folds: usize,
    pub scene: SyntheticSceneSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: None,
            scenes: 200,
            folds: 3,
            scene: SyntheticSceneSpec::easy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: MdbNetConfig,
    pub loss: CombinedLossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            model: MdbNetConfig::default(),
            loss: CombinedLossConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key=value` overrides. Values are parsed as TOML
    /// (`3`, `0.5`, `"late"`, `[1, 2]`); anything else is taken as a string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut root = toml::Table::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::Override(o.clone(), "expected key=value".into()))?;
            let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
                Ok(mut t) => t.remove("v").expect("parsed key"),
                Err(_) => toml::Value::String(raw.to_string()),
            };
            let parts: Vec<&str> = key.trim().split('.').collect();
            if parts.iter().any(|p| p.is_empty()) {
                return Err(ConfigError::Override(o.clone(), "empty key segment".into()));
            }
            let mut table = &mut root;
            for p in &parts[..parts.len() - 1] {
                let entry = table
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
                table = entry
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::Override(o.clone(), format!("`{p}` is not a table")))?;
            }
            table.insert(parts[parts.len() - 1].to_string(), value);
        }
        let cfg: RunConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    /// Training config with the run seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        self.model.validate().map_err(|e| inv(e.to_string()))?;
        self.loss.validate().map_err(|e| inv(e.to_string()))?;
        self.train.validate().map_err(|e| inv(e.to_string()))?;
        self.data.scene.validate().map_err(|e| inv(e.to_string()))?;
        if self.data.scene.grid_dims != self.model.grid_dims {
            return Err(inv(format!(
                "data.scene.grid_dims {:?} differ from model.grid_dims {:?}",
                self.data.scene.grid_dims, self.model.grid_dims
            )));
        }
        if self.data.folds < 2 {
            return Err(inv(format!("data.folds must be ≥ 2, got {}", self.data.folds)));
        }
        Ok(())
    }

    /// Writes the resolved config next to the run's outputs.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}

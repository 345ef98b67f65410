use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use radval::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A run: where the data is, where results go, and how to train.
///
/// ```toml
/// manifest = "data/manifest.json"
/// out_dir = "runs/seed0"
/// epochs = 5
/// rays_per_step = 500
/// learning_rate = 0.1
/// seed = 0
/// valuation_mode = "step_delta"
///
/// [optimizer]
/// kind = "adam"
/// beta1 = 0.0
/// beta2 = 0.999
/// eps = 3e-6
///
/// [metric]
/// peak = 1.0
/// mse_floor = 1e-12
/// ```
///
/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, train: TrainConfig) -> Self {
        Self {
            manifest: manifest.into(),
            out_dir: out_dir.into(),
            train,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.manifest = base.join(&cfg.manifest);
        cfg.out_dir = base.join(&cfg.out_dir);
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !self.manifest.is_file() {
            anyhow::bail!("manifest {} does not exist", self.manifest.display());
        }
        Ok(())
    }

    /// SHA-256 of the training settings; paths are left out so moving a run
    /// does not change its identity.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.train).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

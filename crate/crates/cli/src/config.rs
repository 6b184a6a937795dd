use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pvss_core::camera_graph::DEFAULT_SLOT_LENGTH_S;
use pvss_core::feature_index::{IndexConfig, IndexMode};
use pvss_core::fusion_model::TrainConfig;
use pvss_core::searcher::{DEFAULT_K, DEFAULT_SHORTLIST_RATIO};

use crate::error::{AppError, AppResult};

pub const DATA_ENV: &str = "PVSS_DATA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub listen: String,
    /// List length when a request does not give one.
    pub k: usize,
    pub index: IndexConfig,
    /// Coarse shortlist per layer as a multiple of K; 0 scores everything.
    pub shortlist_ratio: usize,
    pub early_stop: bool,
    pub slot_length_s: f64,
    pub fusion: TrainConfig,
    /// Sampled negatives per positive when building training pairs.
    pub negative_ratio: usize,
    pub eval_seed: u64,
    /// Feature dimensions of a store created from scratch.
    pub appearance_dim: usize,
    pub plate_dim: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("pvss-data"),
            listen: "127.0.0.1:8080".into(),
            k: DEFAULT_K,
            index: IndexConfig::default(),
            shortlist_ratio: DEFAULT_SHORTLIST_RATIO,
            early_stop: false,
            slot_length_s: DEFAULT_SLOT_LENGTH_S,
            fusion: TrainConfig::default(),
            negative_ratio: 3,
            eval_seed: 0,
            appearance_dim: 64,
            plate_dim: 32,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self =
            toml::from_str(&text).map_err(|e| AppError::usage(format!("{}: {}", path.display(), e.message())))?;
        config.validate()?;
        Ok(config)
    }

    /// Config file (if any), then the `PVSS_DATA` environment variable, then
    /// an explicit data directory flag.
    pub fn resolve(config_path: Option<&Path>, data_flag: Option<&Path>) -> AppResult<Self> {
        let mut config = match config_path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(dir) = std::env::var_os(DATA_ENV).filter(|d| !d.is_empty()) {
            config.data_dir = PathBuf::from(dir);
        }
        if let Some(dir) = data_flag {
            config.data_dir = dir.to_path_buf();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> AppResult<()> {
        if self.k == 0 {
            return Err(AppError::usage("k must be at least 1"));
        }
        if !(self.slot_length_s > 0.0 && self.slot_length_s.is_finite()) {
            return Err(AppError::usage("slot_length_s must be positive"));
        }
        if self.appearance_dim == 0 || self.plate_dim == 0 {
            return Err(AppError::usage("feature dimensions must be positive"));
        }
        Ok(())
    }

    pub fn shortlist(&self) -> Option<usize> {
        (self.shortlist_ratio > 0).then_some(self.shortlist_ratio)
    }

    pub fn with_index_mode(mut self, mode: IndexMode) -> Self {
        self.index.mode = mode;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let c: ServiceConfig = toml::from_str("k = 10\n[index]\nmode = \"approx\"\n").unwrap();
        assert_eq!(c.k, 10);
        assert_eq!(c.index.mode, IndexMode::Approx);
        assert_eq!(c.index.trees, IndexConfig::default().trees);
        assert_eq!(c.listen, ServiceConfig::default().listen);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(toml::from_str::<ServiceConfig>("colour = 1").is_err());
        let c: ServiceConfig = toml::from_str("k = 0").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn flag_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pvss.toml");
        std::fs::write(&path, "data_dir = \"from-file\"\n").unwrap();
        let c = ServiceConfig::resolve(Some(&path), Some(Path::new("from-flag"))).unwrap();
        assert_eq!(c.data_dir, PathBuf::from("from-flag"));
    }
}

//! TOML experiment description: `[model]`, `[train]`, `[schedule]` and
//! `[data]` sections. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{Schedule, ScheduleKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Session file with all sequences; split into train and test unless
    /// `test` is given.
    pub sessions: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub split_ratio: f64,
    pub split_seed: u64,
    /// Minimum sessions per item; 0 disables filtering.
    pub min_item_users: usize,
    /// Minimum items per session; 0 disables filtering.
    pub min_user_items: usize,
    /// Overlapping sub-sequence windows when splitting long sessions.
    pub overlap: bool,
    /// Transfer pairs for fine-tuning on a new catalog.
    pub transfer_train: Option<PathBuf>,
    pub transfer_test: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            sessions: None,
            test: None,
            split_ratio: 0.8,
            split_seed: 0,
            min_item_users: 0,
            min_user_items: 0,
            overlap: false,
            transfer_train: None,
            transfer_test: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `vocab_size = 0` means take it from the data.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schedule: Schedule,
    pub data: DataConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut c = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let d = &mut c.data;
        for p in [&mut d.sessions, &mut d.test, &mut d.transfer_train, &mut d.transfer_test].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let mut model = self.model.clone();
        if model.vocab_size == 0 {
            model.vocab_size = 1;
        }
        model.validate()?;
        self.train.validate()?;
        self.schedule.validate()?;
        let d = &self.data;
        if !(d.split_ratio > 0.0 && d.split_ratio < 1.0) && d.test.is_none() {
            return Err(Error::Config(format!("data.split_ratio must be in (0, 1), got {}", d.split_ratio)));
        }
        match self.schedule.kind {
            ScheduleKind::Tf if d.transfer_train.is_none() || d.transfer_test.is_none() => {
                Err(Error::Config("schedule kind tf needs data.transfer_train and data.transfer_test".into()))
            }
            ScheduleKind::Tf => Ok(()),
            _ if d.sessions.is_none() => Err(Error::Config("data.sessions is required".into())),
            _ => Ok(()),
        }
    }

    /// Every effective setting, defaults included, as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stacking::StackMode;

    const SAMPLE: &str = r#"
[model]
embed_dim = 16
num_blocks = 2

[train]
batch_size = 32
eval_every = 50

[schedule]
kind = "cl"
stack_times = 2
mode = "cross"
fractions = [0.4, 0.6, 1.0]

[data]
sessions = "train.txt"
"#;

    #[test]
    fn parses_sections_with_defaults() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.model.embed_dim, 16);
        assert_eq!(c.model.base_dilations, vec![1, 2, 4, 8]);
        assert_eq!(c.train.learning_rate, 1e-3);
        assert_eq!(c.schedule.kind, ScheduleKind::Cl);
        assert_eq!(c.schedule.mode, StackMode::Cross);
        assert_eq!(c.data.split_ratio, 0.8);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml("[train]\nlearnin_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learnin_rate"), "{err}");
        assert!(ExperimentConfig::from_toml("[extra]\nx = 1\n").is_err());
    }

    #[test]
    fn resolved_form_round_trips() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let text = c.to_toml();
        assert!(text.contains("patience = 5"));
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, SAMPLE).unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        assert_eq!(c.data.sessions.unwrap(), dir.path().join("train.txt"));
    }

    #[test]
    fn semantic_checks() {
        assert!(ExperimentConfig::from_toml("[data]\nsessions = \"a\"\n[train]\npatience = 0\n").is_err());
        assert!(ExperimentConfig::from_toml("[schedule]\nkind = \"tf\"\n").is_err());
        assert!(ExperimentConfig::from_toml("[schedule]\nkind = \"sideways\"\n").is_err());
    }
}

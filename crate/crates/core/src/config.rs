//! Declarative pipeline configuration. An empty JSON document is a valid
//! config: every field defaults to the desk-scale profile.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetConfig, DatasetError, WorldKind};
use crate::nn::OutputMode;
use crate::util::RngSeed;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainProfile {
    pub hidden: usize,
    pub layers: usize,
    pub kernel: usize,
    pub batch: usize,
    pub iterations: usize,
    pub lr: f64,
    pub j: usize,
    pub output_mode: OutputMode,
}

impl Default for TrainProfile {
    fn default() -> TrainProfile {
        TrainProfile {
            hidden: 16,
            layers: 4,
            kernel: 5,
            batch: 3,
            iterations: 5000,
            lr: 3e-4,
            j: 5,
            output_mode: OutputMode::FullFrame,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanProfile {
    /// Planner iteration cap; absent means 4n (2D) or 6n (3D).
    pub max_itr: Option<usize>,
}

impl Default for PlanProfile {
    fn default() -> PlanProfile {
        PlanProfile { max_itr: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsProfile {
    pub data_dir: String,
    pub model_file: String,
    pub report_dir: String,
}

impl Default for PathsProfile {
    fn default() -> PathsProfile {
        PathsProfile {
            data_dir: "data/desk2d".to_string(),
            model_file: "models/desk2d.stpm".to_string(),
            report_dir: "reports/desk2d".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub dataset: DatasetConfig,
    pub train: TrainProfile,
    pub plan: PlanProfile,
    pub paths: PathsProfile,
}

impl Default for AppConfig {
    fn default() -> AppConfig {
        desk2d()
    }
}

/// Desk-scale profile: small worlds and a model that trains in minutes on
/// one CPU core.
pub fn desk2d() -> AppConfig {
    AppConfig {
        dataset: DatasetConfig {
            world: WorldKind::Forest,
            n: 16,
            d: 2,
            obstacles: 4,
            robots: 1,
            workspaces: 20,
            clips_per_workspace: 100,
            eval_tasks_per_workspace: 10,
            unseen_workspaces: 5,
            tasks_per_unseen_workspace: 8,
            p: 3,
            expert_iterations: 2000,
            seed: RngSeed(2024),
        },
        train: TrainProfile::default(),
        plan: PlanProfile::default(),
        paths: PathsProfile::default(),
    }
}

/// Full-scale profile (64×64 worlds, 80,000 training clips, wide model).
/// Far beyond a desktop-CPU session; shipped for completeness.
pub fn paper2d() -> AppConfig {
    AppConfig {
        dataset: DatasetConfig {
            world: WorldKind::Forest,
            n: 64,
            d: 2,
            obstacles: 15,
            robots: 1,
            workspaces: 100,
            clips_per_workspace: 800,
            eval_tasks_per_workspace: 200,
            unseen_workspaces: 20,
            tasks_per_unseen_workspace: 400,
            p: 3,
            expert_iterations: 10000,
            seed: RngSeed(2024),
        },
        train: TrainProfile {
            hidden: 64,
            layers: 4,
            kernel: 5,
            batch: 128,
            iterations: 20000,
            lr: 3e-4,
            j: 5,
            output_mode: OutputMode::FullFrame,
        },
        plan: PlanProfile::default(),
        paths: PathsProfile {
            data_dir: "data/paper2d".to_string(),
            model_file: "models/paper2d.stpm".to_string(),
            report_dir: "reports/paper2d".to_string(),
        },
    }
}

impl AppConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.dataset.validate()?;
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        let t = &self.train;
        if t.hidden == 0 || t.layers == 0 {
            return bad("hidden width and layer count must be positive");
        }
        if t.kernel == 0 || t.kernel % 2 == 0 {
            return bad("kernel must be odd");
        }
        if t.batch == 0 || t.iterations == 0 {
            return bad("batch and iterations must be positive");
        }
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return bad("lr must be positive and finite");
        }
        if t.j == 0 {
            return bad("j must be at least 1");
        }
        if self.paths.data_dir.is_empty()
            || self.paths.model_file.is_empty()
            || self.paths.report_dir.is_empty()
        {
            return bad("paths must be non-empty");
        }
        Ok(())
    }
}

pub fn load_config(path: &FsPath) -> Result<AppConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let config: AppConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_desk_profile() {
        let config: AppConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(config, desk2d());
        config.validate().unwrap();
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let config: AppConfig =
            serde_json::from_str(r#"{"train": {"iterations": 12}}"#).unwrap();
        assert_eq!(config.train.iterations, 12);
        assert_eq!(config.train.hidden, desk2d().train.hidden);
        assert_eq!(config.dataset, desk2d().dataset);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<AppConfig>(r#"{"trainer": {}}"#).is_err());
    }

    #[test]
    fn profiles_validate() {
        desk2d().validate().unwrap();
        paper2d().validate().unwrap();
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut c = desk2d();
        c.train.kernel = 4;
        assert!(c.validate().is_err());
        let mut c = desk2d();
        c.train.lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = desk2d();
        c.dataset.robots = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = paper2d();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: AppConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}

//! The run configuration document shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::evaluator::{EvalProtocol, StartPosition};
use crate::imaging::SceneManifest;
use crate::trainer::{config_hash, TrainConfig};
use crate::worksim::{MotionConfig, ScratchRewardConfig, WorkspaceConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeployConfig {
    pub starts: Vec<StartPosition>,
    pub trials_per_start: usize,
}

impl Default for DeployConfig {
    fn default() -> Self {
        DeployConfig {
            starts: StartPosition::ALL.to_vec(),
            trials_per_start: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Seed of the procedural scene textures, separate from the run seed so
    /// that several runs can share one scene.
    pub scene_seed: u64,
    /// Relative paths resolve against the config file's directory.
    pub output_dir: PathBuf,
    /// Scene manifest file; the built-in preset is used when absent.
    pub scene_manifest: Option<PathBuf>,
    pub scene_preset: usize,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub train: TrainConfig,
    pub eval: EvalProtocol,
    pub workspace: WorkspaceConfig,
    pub deploy: DeployConfig,
    pub motion: MotionConfig,
    pub scratch: ScratchRewardConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scene_seed: 0,
            output_dir: PathBuf::from("runs/default"),
            scene_manifest: None,
            scene_preset: 0,
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            train: TrainConfig::default(),
            eval: EvalProtocol::default(),
            workspace: WorkspaceConfig::default(),
            deploy: DeployConfig::default(),
            motion: MotionConfig::default(),
            scratch: ScratchRewardConfig::default(),
        }
    }
}

/// A parsed config together with the directory it was loaded from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LoadedConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = RunConfig::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, base_dir })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        self.workspace.validate()?;
        if self.deploy.trials_per_start == 0 || self.deploy.starts.is_empty() {
            return Err(Error::Config("deploy: need at least one start and one trial".into()));
        }
        if self.env.state_size != crate::agent::STATE_SIZE {
            return Err(Error::Config(format!(
                "env.state_size must be {} for the Q-network input",
                crate::agent::STATE_SIZE
            )));
        }
        if self.motion.velocity_range.iter().chain(&self.motion.extent).any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("motion: ranges must be non-negative".into()));
        }
        Ok(())
    }
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn manifest(&self) -> Result<SceneManifest> {
        let m = match &self.config.scene_manifest {
            Some(p) => SceneManifest::load(self.resolve(p))?,
            None => SceneManifest::preset(self.config.scene_preset),
        };
        if m.image_size as f64 != self.config.env.transition.image_size {
            return Err(Error::Config(format!(
                "env.transition.image_size ({}) differs from the scene image size ({})",
                self.config.env.transition.image_size, m.image_size
            )));
        }
        Ok(m)
    }

    /// Hash that a checkpoint must carry to be evaluated with this config.
    pub fn model_hash(&self) -> Result<u64> {
        let c = &self.config;
        Ok(config_hash(&self.manifest()?, c.scene_seed, &c.env, &c.agent))
    }

    /// Training config with the run seed and output paths filled in.
    pub fn train_config(&self, metrics_path: PathBuf) -> TrainConfig {
        TrainConfig {
            seed: self.config.seed,
            metrics_path: Some(metrics_path),
            ..self.config.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml_str("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("sed = 3").unwrap_err().to_string();
        assert!(err.contains("sed"), "{err}");
        assert!(RunConfig::from_toml_str("[agent]\ngama = 0.9").is_err());
    }

    #[test]
    fn partial_tables_keep_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 7\n[agent]\ngamma = 0.9\n[eval]\ncorruption = \"blur:15\"").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.agent.gamma, 0.9);
        assert_eq!(cfg.agent.batch_size, 32);
        assert_eq!(cfg.eval.corruption, Some(crate::evaluator::Corruption::Blur(15)));
        assert!(RunConfig::from_toml_str("[eval]\ncorruption = \"fog:1\"").is_err());
    }
}

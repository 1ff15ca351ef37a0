//! Flat run configuration shared by the command-line tools.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{Algo, RelabelStrategy, TrainConfig, WeightConfig};
use crate::env::EnvId;
use crate::error::{config, Result};

/// Every key is optional in a config file; missing keys take the defaults
/// below and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env_id: EnvId,
    pub algo: Algo,
    pub dataset_path: Option<PathBuf>,
    pub total_steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub drw_gamma: f64,
    pub clip_bound: f64,
    pub eps_min: f64,
    pub baw_percentile_final: f64,
    pub baw_increment: f64,
    pub queue_capacity: usize,
    pub use_drw: bool,
    pub use_geaw: bool,
    pub use_baw: bool,
    pub rl_gamma: f64,
    pub learning_rate: f64,
    pub polyak: f64,
    pub p_relabel: Option<f64>,
    pub relabel: RelabelStrategy,
    pub marwil_beta: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_train_config(EnvId::PointReach, &TrainConfig::new(Algo::Wgcsl))
    }
}

impl RunConfig {
    pub fn from_train_config(env_id: EnvId, t: &TrainConfig) -> Self {
        let w = &t.weights;
        RunConfig {
            env_id,
            algo: t.algo,
            dataset_path: None,
            total_steps: t.total_steps,
            batch_size: t.batch_size,
            seed: t.seed,
            eval_every: t.eval_every,
            eval_episodes: t.eval_episodes,
            drw_gamma: w.drw_gamma,
            clip_bound: w.clip_bound,
            eps_min: w.eps_min,
            baw_percentile_final: w.baw_percentile_final,
            baw_increment: w.baw_increment,
            queue_capacity: w.queue_capacity,
            use_drw: w.use_drw,
            use_geaw: w.use_geaw,
            use_baw: w.use_baw,
            rl_gamma: t.rl_gamma,
            learning_rate: t.learning_rate,
            polyak: t.polyak,
            p_relabel: t.p_relabel,
            relabel: t.relabel,
            marwil_beta: t.marwil_beta,
            hidden_layers: t.hidden_layers,
            hidden_width: t.hidden_width,
            output_dir: None,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            algo: self.algo,
            weights: WeightConfig {
                drw_gamma: self.drw_gamma,
                clip_bound: self.clip_bound,
                eps_min: self.eps_min,
                baw_percentile_final: self.baw_percentile_final,
                baw_increment: self.baw_increment,
                queue_capacity: self.queue_capacity,
                use_drw: self.use_drw,
                use_geaw: self.use_geaw,
                use_baw: self.use_baw,
            },
            rl_gamma: self.rl_gamma,
            learning_rate: self.learning_rate,
            polyak: self.polyak,
            p_relabel: self.p_relabel,
            relabel: self.relabel,
            marwil_beta: self.marwil_beta,
            batch_size: self.batch_size,
            total_steps: self.total_steps,
            eval_every: self.eval_every,
            eval_episodes: self.eval_episodes,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(config("total_steps must be positive"));
        }
        self.train_config().validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.train_config(), TrainConfig::new(Algo::Wgcsl));
        assert_eq!(cfg.learning_rate, 5e-4);
        assert_eq!(cfg.p_relabel, None);
        assert_eq!(cfg.train_config().relabel_probability(), 0.8);
        assert_eq!(cfg.eval_episodes, 100);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"algo": "gcsl", "seed": 4, "env_id": "pointrooms"}"#).unwrap();
        assert_eq!(cfg.algo, Algo::Gcsl);
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.env_id, EnvId::PointRooms);
        assert_eq!(cfg.batch_size, 128);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        assert!(RunConfig::from_json(r#"{"learning_rte": 0.1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"p_relabel": 1.5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"rl_gamma": 1.0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"total_steps": 0}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig {
            dataset_path: Some("data/x.ogcb".into()),
            use_geaw: false,
            relabel: RelabelStrategy::Prop2,
            ..RunConfig::default()
        };
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}

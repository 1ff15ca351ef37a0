//! Agent checkpoints are directories: one network file per network plus a
//! JSON training-state record. Optimizer moments are not persisted; a
//! restored agent restarts Adam from zero moments.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdvantageQueue, Agent, TrainConfig};
use crate::error::{LoadError, Result};
use crate::nn::{load_network, save_network, AdamState};

pub const AGENT_FORMAT_VERSION: u32 = 1;

const POLICY: &str = "policy.ckpt";
const CRITIC: &str = "critic.ckpt";
const TARGET_POLICY: &str = "target_policy.ckpt";
const TARGET_CRITIC: &str = "target_critic.ckpt";
const STATE: &str = "state.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingState {
    format_version: u32,
    obs_dim: usize,
    goal_dim: usize,
    act_dim: usize,
    train_step: u64,
    queue: Vec<f64>,
    config: TrainConfig,
}

pub fn save_agent(agent: &Agent, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    save_network(dir.join(POLICY), &agent.policy, Some(&agent.normalizer))?;
    for (name, net) in [
        (CRITIC, &agent.critic),
        (TARGET_POLICY, &agent.target_policy),
        (TARGET_CRITIC, &agent.target_critic),
    ] {
        if let Some(net) = net {
            save_network(dir.join(name), net, None)?;
        }
    }
    let state = TrainingState {
        format_version: AGENT_FORMAT_VERSION,
        obs_dim: agent.obs_dim,
        goal_dim: agent.goal_dim,
        act_dim: agent.act_dim,
        train_step: agent.train_step,
        queue: agent.queue.iter().collect(),
        config: agent.config.clone(),
    };
    fs::write(dir.join(STATE), serde_json::to_string_pretty(&state)? + "\n")?;
    Ok(())
}

pub fn load_agent(dir: impl AsRef<Path>) -> Result<Agent> {
    let dir = dir.as_ref();
    let text = fs::read(dir.join(STATE))?;
    let state: TrainingState = crate::data::format::parse_manifest(&text, AGENT_FORMAT_VERSION)?;
    let (policy, normalizer) = load_network(dir.join(POLICY))?;
    let normalizer = normalizer.ok_or_else(|| LoadError::Manifest("policy checkpoint lacks normalizer".into()))?;
    let in_dim = state.obs_dim + state.goal_dim;
    if policy.input_dim() != in_dim || policy.output_dim() != state.act_dim || normalizer.dim != in_dim {
        return Err(LoadError::Manifest("policy shape does not match training state".into()).into());
    }
    let optional = |name: &str| -> Result<Option<_>> {
        if state.config.uses_critic() {
            Ok(Some(load_network(dir.join(name))?.0))
        } else {
            Ok(None)
        }
    };
    let critic = optional(CRITIC)?;
    let target_policy = optional(TARGET_POLICY)?;
    let target_critic = optional(TARGET_CRITIC)?;
    if let Some(c) = &critic {
        if c.input_dim() != in_dim + state.act_dim || c.output_dim() != 1 {
            return Err(LoadError::Manifest("critic shape does not match training state".into()).into());
        }
    }
    let mut queue = AdvantageQueue::new(state.config.weights.queue_capacity);
    queue.extend(state.queue);
    Ok(Agent {
        obs_dim: state.obs_dim,
        goal_dim: state.goal_dim,
        act_dim: state.act_dim,
        normalizer,
        policy_opt: AdamState::new(&policy),
        critic_opt: critic.as_ref().map(AdamState::new),
        policy,
        critic,
        target_policy,
        target_critic,
        queue,
        train_step: state.train_step,
        config: state.config,
    })
}

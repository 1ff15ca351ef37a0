//! Offline trajectory datasets.
//!
//! A dataset stores `n_traj` fixed-horizon trajectories in columnar `f32`
//! arrays. Each trajectory keeps `T + 1` states so that every transition has
//! a successor. Rewards are never stored; they are recomputed from achieved
//! goals on demand.

pub(crate) mod format;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{self, reward_f32, EnvId, EnvSpec, Vec2};
use crate::error::{invalid, Result};
use crate::rng::{derive_seed, derived_rng};

pub use format::{load, read_from, save, write_to, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Collector {
    Random,
    Expert,
}

impl Collector {
    pub fn name(self) -> &'static str {
        match self {
            Collector::Random => "random",
            Collector::Expert => "expert",
        }
    }
}

impl fmt::Display for Collector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Collector {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Collector::Random),
            "expert" => Ok(Collector::Expert),
            other => Err(format!("unknown collector `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub env_id: EnvId,
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub act_dim: usize,
    pub horizon: usize,
    pub n_traj: usize,
    pub collector: Collector,
    pub noise_sigma: f64,
    pub seed: u64,
    pub format_version: u32,
}

impl Manifest {
    pub fn states_len(&self) -> usize {
        self.n_traj * (self.horizon + 1) * self.obs_dim
    }

    pub fn actions_len(&self) -> usize {
        self.n_traj * self.horizon * self.act_dim
    }

    pub fn achieved_goals_len(&self) -> usize {
        self.n_traj * (self.horizon + 1) * self.goal_dim
    }

    pub fn desired_goals_len(&self) -> usize {
        self.n_traj * self.goal_dim
    }
}

/// Columnar trajectory store. Arrays are row-major:
/// `states[traj][t][dim]` with `t ∈ 0..=T`, `actions[traj][t][dim]` with
/// `t ∈ 0..T`, `achieved_goals` like states, `desired_goals[traj][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub manifest: Manifest,
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub achieved_goals: Vec<f32>,
    pub desired_goals: Vec<f32>,
}

/// Borrowed view of one trajectory.
#[derive(Debug, Clone, Copy)]
pub struct Trajectory<'a> {
    pub states: &'a [f32],
    pub actions: &'a [f32],
    pub achieved_goals: &'a [f32],
    pub desired_goal: &'a [f32],
    obs_dim: usize,
    goal_dim: usize,
    act_dim: usize,
}

impl<'a> Trajectory<'a> {
    pub fn horizon(&self) -> usize {
        self.actions.len() / self.act_dim
    }

    pub fn state(&self, t: usize) -> &'a [f32] {
        &self.states[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn action(&self, t: usize) -> &'a [f32] {
        &self.actions[t * self.act_dim..(t + 1) * self.act_dim]
    }

    pub fn achieved_goal(&self, t: usize) -> &'a [f32] {
        &self.achieved_goals[t * self.goal_dim..(t + 1) * self.goal_dim]
    }

    /// Reward of transition `t` for `goal`: whether `achieved_goal(t + 1)`
    /// lies within `threshold` of it.
    pub fn reward(&self, t: usize, goal: &[f32], threshold: f64) -> f64 {
        reward_f32(self.achieved_goal(t + 1), goal, threshold)
    }
}

impl OfflineDataset {
    /// Builds a dataset, checking array lengths against the manifest.
    pub fn from_parts(
        manifest: Manifest,
        states: Vec<f32>,
        actions: Vec<f32>,
        achieved_goals: Vec<f32>,
        desired_goals: Vec<f32>,
    ) -> Result<Self> {
        let checks = [
            ("states", states.len(), manifest.states_len()),
            ("actions", actions.len(), manifest.actions_len()),
            ("achieved_goals", achieved_goals.len(), manifest.achieved_goals_len()),
            ("desired_goals", desired_goals.len(), manifest.desired_goals_len()),
        ];
        for (name, found, expected) in checks {
            if found != expected {
                return Err(crate::error::LoadError::ShapeMismatch {
                    array: name.into(),
                    found: found as u64,
                    expected: expected as u64,
                }
                .into());
            }
        }
        Ok(OfflineDataset {
            manifest,
            states,
            actions,
            achieved_goals,
            desired_goals,
        })
    }

    pub fn n_traj(&self) -> usize {
        self.manifest.n_traj
    }

    pub fn horizon(&self) -> usize {
        self.manifest.horizon
    }

    pub fn n_transitions(&self) -> usize {
        self.manifest.n_traj * self.manifest.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.n_transitions() == 0
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec::new(self.manifest.env_id)
    }

    pub fn trajectory(&self, j: usize) -> Trajectory<'_> {
        let m = &self.manifest;
        let t1 = m.horizon + 1;
        Trajectory {
            states: &self.states[j * t1 * m.obs_dim..(j + 1) * t1 * m.obs_dim],
            actions: &self.actions[j * m.horizon * m.act_dim..(j + 1) * m.horizon * m.act_dim],
            achieved_goals: &self.achieved_goals[j * t1 * m.goal_dim..(j + 1) * t1 * m.goal_dim],
            desired_goal: &self.desired_goals[j * m.goal_dim..(j + 1) * m.goal_dim],
            obs_dim: m.obs_dim,
            goal_dim: m.goal_dim,
            act_dim: m.act_dim,
        }
    }

    pub fn trajectories(&self) -> impl Iterator<Item = Trajectory<'_>> {
        (0..self.n_traj()).map(|j| self.trajectory(j))
    }
}

/// Behavior policy used to collect a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BehaviorPolicy {
    /// Uniform actions in `[-1, 1]^act_dim`.
    Random,
    /// Greedy displacement toward the goal plus Gaussian noise.
    Expert { noise_sigma: f64 },
}

impl BehaviorPolicy {
    pub fn collector(&self) -> Collector {
        match self {
            BehaviorPolicy::Random => Collector::Random,
            BehaviorPolicy::Expert { .. } => Collector::Expert,
        }
    }

    pub fn noise_sigma(&self) -> f64 {
        match *self {
            BehaviorPolicy::Random => 0.0,
            BehaviorPolicy::Expert { noise_sigma } => noise_sigma,
        }
    }
}

/// Scripted expert: move toward the goal as far as the action bound allows,
/// perturbed by `N(0, noise_sigma²)` and clipped again.
pub fn expert_action(state: Vec2, goal: Vec2, noise_sigma: f64, rng: &mut impl rand::Rng) -> Vec2 {
    let mut a = [
        (goal[0] - state[0]).clamp(-1.0, 1.0),
        (goal[1] - state[1]).clamp(-1.0, 1.0),
    ];
    if noise_sigma > 0.0 {
        let noise = Normal::new(0.0, noise_sigma).expect("finite positive sigma");
        for x in &mut a {
            *x = (*x + noise.sample(rng)).clamp(-1.0, 1.0);
        }
    }
    a
}

fn to_f32(p: Vec2) -> [f32; 2] {
    [p[0] as f32, p[1] as f32]
}

fn to_f64(p: [f32; 2]) -> Vec2 {
    [p[0] as f64, p[1] as f64]
}

/// Rolls `n_traj` fixed-horizon episodes with `behavior`.
///
/// Positions are rounded to `f32` after every step and the rollout continues
/// from the rounded state, so the stored arrays replay exactly under
/// [`env::step`].
pub fn collect(spec: &EnvSpec, behavior: BehaviorPolicy, n_traj: usize, seed: u64) -> Result<OfflineDataset> {
    spec.validate()?;
    if n_traj == 0 {
        return Err(invalid("n_traj must be at least 1"));
    }
    if let BehaviorPolicy::Expert { noise_sigma } = behavior {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(invalid("noise_sigma must be finite and non-negative"));
        }
    }
    let horizon = spec.horizon;
    let manifest = Manifest {
        env_id: spec.env_id,
        obs_dim: spec.obs_dim,
        goal_dim: spec.goal_dim,
        act_dim: spec.act_dim,
        horizon,
        n_traj,
        collector: behavior.collector(),
        noise_sigma: behavior.noise_sigma(),
        seed,
        format_version: FORMAT_VERSION,
    };
    let mut states = Vec::with_capacity(manifest.states_len());
    let mut actions = Vec::with_capacity(manifest.actions_len());
    let mut achieved = Vec::with_capacity(manifest.achieved_goals_len());
    let mut desired = Vec::with_capacity(manifest.desired_goals_len());
    let mut rng = derived_rng(seed, 0);

    for j in 0..n_traj {
        let obs = env::reset(spec, derive_seed(seed, 1 + j as u64));
        let goal = to_f32(obs.desired_goal);
        let mut s = to_f32(obs.state);
        desired.extend_from_slice(&goal);
        states.extend_from_slice(&s);
        achieved.extend_from_slice(&to_f32(env::phi(spec, to_f64(s))));
        for _ in 0..horizon {
            let a = match behavior {
                BehaviorPolicy::Random => [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
                BehaviorPolicy::Expert { noise_sigma } => expert_action(to_f64(s), to_f64(goal), noise_sigma, &mut rng),
            };
            let a = to_f32(a);
            let next = to_f32(env::step(spec, to_f64(s), to_f64(a))?);
            actions.extend_from_slice(&a);
            states.extend_from_slice(&next);
            achieved.extend_from_slice(&to_f32(env::phi(spec, to_f64(next))));
            s = next;
        }
    }
    OfflineDataset::from_parts(manifest, states, actions, achieved, desired)
}

/// Mean per-trajectory return against the original desired goal.
/// `discount = None` gives the undiscounted sum.
pub fn dataset_return(dataset: &OfflineDataset, discount: Option<f64>) -> Result<f64> {
    if dataset.n_traj() == 0 {
        return Err(invalid("empty dataset"));
    }
    let threshold = dataset.env_spec().threshold;
    let total: f64 = dataset
        .trajectories()
        .map(|traj| trajectory_return(&traj, traj.desired_goal, threshold, discount))
        .sum();
    Ok(total / dataset.n_traj() as f64)
}

pub fn trajectory_return(traj: &Trajectory<'_>, goal: &[f32], threshold: f64, discount: Option<f64>) -> f64 {
    let gamma = discount.unwrap_or(1.0);
    let mut scale = 1.0;
    let mut ret = 0.0;
    for t in 0..traj.horizon() {
        ret += scale * traj.reward(t, goal, threshold);
        scale *= gamma;
    }
    ret
}

//! Offline goal-conditioned learners.
//!
//! All four algorithms regress the policy mean onto dataset actions with a
//! per-transition weight; they differ in which goals are used and in how the
//! weight is formed:
//!
//! * `wgcsl`: hindsight goals, weight `γ^δ · clip(exp A, 0, M) · ε(A)` with
//!   each factor switchable
//! * `gcsl`: hindsight goals, weight 1
//! * `goal_bc`: original goals, weight 1
//! * `goal_marwil`: original goals, weight `min(exp(A/β), M)`
//!
//! Advantages come from a TD-trained critic `Q(s, a, g)` through
//! `A = r + γ·V(s', g) − V(s, g)` with `V(s, g) = Q(s, π(s, g), g)`.

mod checkpoint;
mod weights;

pub use checkpoint::{load_agent, save_agent, AGENT_FORMAT_VERSION};
pub use weights::{baw_threshold, compute_weight, marwil_weight, percentile_in_place, AdvantageQueue, WeightConfig};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::OfflineDataset;
use crate::error::{config, invalid, Error, Result};
use crate::eval::{evaluate, GoalPolicy, MetricRow};
use crate::nn::{polyak_update, AdamState, MlpParams, Normalizer, OutputActivation, Scalar};
use crate::relabel::{sample_prop2_batch, sample_relabeled_batch, RelabeledBatch, SuffixReturnIndex};
use crate::rng::{derive_seed, derived_rng};

/// Seed streams derived from the run seed.
pub const INIT_STREAM: u64 = 1;
pub const SAMPLE_STREAM: u64 = 2;
pub const EVAL_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Wgcsl,
    Gcsl,
    GoalBc,
    GoalMarwil,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Wgcsl, Algo::Gcsl, Algo::GoalBc, Algo::GoalMarwil];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Wgcsl => "wgcsl",
            Algo::Gcsl => "gcsl",
            Algo::GoalBc => "goal_bc",
            Algo::GoalMarwil => "goal_marwil",
        }
    }

    /// Trains on hindsight goals.
    pub fn relabels(self) -> bool {
        matches!(self, Algo::Wgcsl | Algo::Gcsl)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            invalid(format!(
                "unknown algo {s:?} (expected wgcsl, gcsl, goal_bc or goal_marwil)"
            ))
        })
    }
}

/// How hindsight goals are chosen for relabeling algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelStrategy {
    /// Uniform future achieved goal with probability `p_relabel`.
    Future,
    /// Relabel only where the original goal is lost and the relabeled
    /// suffix beats every matching original suffix.
    Prop2,
}

/// Relabel rate of batches shared by the TD and policy losses.
pub const CRITIC_P_RELABEL: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algo: Algo,
    pub weights: WeightConfig,
    pub rl_gamma: f64,
    pub learning_rate: f64,
    /// Target retention: `target ← polyak·target + (1 − polyak)·online`.
    pub polyak: f64,
    /// Probability that a sampled transition gets a hindsight goal. `None`
    /// picks [`CRITIC_P_RELABEL`] when the batch also trains a critic and 1
    /// otherwise: without a TD loss the policy imitates fully relabeled data.
    pub p_relabel: Option<f64>,
    pub relabel: RelabelStrategy,
    pub marwil_beta: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    /// Steps between evaluation rows; 0 evaluates only at the end.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(algo: Algo) -> Self {
        TrainConfig {
            algo,
            weights: WeightConfig::default(),
            rl_gamma: 0.98,
            learning_rate: 5e-4,
            polyak: 0.9,
            p_relabel: None,
            relabel: RelabelStrategy::Future,
            marwil_beta: 1.0,
            batch_size: 128,
            total_steps: 50_000,
            eval_every: 2_500,
            eval_episodes: 100,
            hidden_layers: 3,
            hidden_width: 256,
            seed: 0,
        }
    }

    pub fn uses_critic(&self) -> bool {
        match self.algo {
            Algo::Wgcsl => self.weights.needs_critic(),
            Algo::GoalMarwil => true,
            Algo::Gcsl | Algo::GoalBc => false,
        }
    }

    /// Relabel probability actually used when sampling training batches.
    pub fn relabel_probability(&self) -> f64 {
        match (self.algo.relabels(), self.p_relabel) {
            (false, _) => 0.0,
            (true, Some(p)) => p,
            (true, None) if self.uses_critic() => CRITIC_P_RELABEL,
            (true, None) => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.rl_gamma > 0.0 && self.rl_gamma < 1.0) {
            return Err(config(format!("rl_gamma {} outside (0, 1)", self.rl_gamma)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config(format!("learning_rate {} invalid", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return Err(config(format!("polyak {} outside [0, 1]", self.polyak)));
        }
        if let Some(p) = self.p_relabel.filter(|p| !(0.0..=1.0).contains(p)) {
            return Err(config(format!("p_relabel {p} outside [0, 1]")));
        }
        if !(self.marwil_beta > 0.0) {
            return Err(config(format!("marwil_beta {} must be positive", self.marwil_beta)));
        }
        if self.batch_size == 0 || self.eval_episodes == 0 || self.hidden_width == 0 {
            return Err(config("batch_size, eval_episodes and hidden_width must be positive"));
        }
        if self.relabel == RelabelStrategy::Prop2 && !self.algo.relabels() {
            return Err(config(format!("{} does not relabel goals", self.algo)));
        }
        Ok(())
    }

    fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        sizes.push(output);
        sizes
    }
}

/// Per-step training statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// NaN without a critic.
    pub td_loss: f64,
    pub actor_loss: f64,
    pub mean_weight: f64,
}

/// Policy, critic, their targets and optimizer state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub act_dim: usize,
    pub config: TrainConfig,
    /// Statistics over concatenated `[state, goal]` rows.
    pub normalizer: Normalizer,
    pub policy: MlpParams<f32>,
    pub critic: Option<MlpParams<f32>>,
    pub target_policy: Option<MlpParams<f32>>,
    pub target_critic: Option<MlpParams<f32>>,
    policy_opt: AdamState<f32>,
    critic_opt: Option<AdamState<f32>>,
    pub queue: AdvantageQueue,
    pub train_step: u64,
}

/// `clip(r + γ·q', 0, 1/(1 − γ))`.
pub fn td_targets(rewards: &[f32], next_q: &[f32], gamma: f64) -> Vec<f32> {
    let ceiling = 1.0 / (1.0 - gamma);
    rewards
        .iter()
        .zip(next_q)
        .map(|(&r, &q)| (r as f64 + gamma * q as f64).clamp(0.0, ceiling) as f32)
        .collect()
}

/// Mean squared error of a scalar-output network and its parameter gradient.
pub fn mse_loss_grad<F: Scalar>(
    net: &MlpParams<F>,
    input: &[F],
    batch: usize,
    targets: &[F],
) -> Result<(f64, MlpParams<F>)> {
    if net.output_dim() != 1 || targets.len() != batch {
        return Err(invalid("mse: expected one scalar target per row"));
    }
    let (q, cache) = net.forward(input, batch)?;
    let scale = F::of(2.0 / batch as f64);
    let mut loss = 0.0;
    let grad: Vec<F> = q
        .iter()
        .zip(targets)
        .map(|(&q, &y)| {
            let d = q - y;
            loss += d.as_f64() * d.as_f64();
            scale * d
        })
        .collect();
    Ok((loss / batch as f64, net.backward(&cache, &grad)?))
}

/// `mean_b w_b·‖π(x_b) − a_b‖²` and its parameter gradient.
pub fn weighted_regression_loss_grad<F: Scalar>(
    net: &MlpParams<F>,
    input: &[F],
    batch: usize,
    actions: &[F],
    weights: &[F],
) -> Result<(f64, MlpParams<F>)> {
    let d = net.output_dim();
    if actions.len() != batch * d || weights.len() != batch {
        return Err(invalid("weighted regression: action or weight length mismatch"));
    }
    let (out, cache) = net.forward(input, batch)?;
    let scale = F::of(2.0 / batch as f64);
    let mut loss = 0.0;
    let mut grad = vec![F::zero(); out.len()];
    for b in 0..batch {
        let w = weights[b];
        for j in 0..d {
            let k = b * d + j;
            let diff = out[k] - actions[k];
            loss += (w * diff * diff).as_f64();
            grad[k] = scale * w * diff;
        }
    }
    Ok((loss / batch as f64, net.backward(&cache, &grad)?))
}

fn concat_rows(a: &[f32], a_dim: usize, b: &[f32], b_dim: usize, n: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n * (a_dim + b_dim));
    for k in 0..n {
        out.extend_from_slice(&a[k * a_dim..(k + 1) * a_dim]);
        out.extend_from_slice(&b[k * b_dim..(k + 1) * b_dim]);
    }
    out
}

impl Agent {
    pub fn new(config: TrainConfig, obs_dim: usize, goal_dim: usize, act_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = derived_rng(config.seed, INIT_STREAM);
        let in_dim = obs_dim + goal_dim;
        let policy = MlpParams::new(
            &config.layer_sizes(in_dim, act_dim),
            OutputActivation::Tanh { scale: 1.0 },
            &mut rng,
        )?;
        let critic = if config.uses_critic() {
            Some(MlpParams::new(
                &config.layer_sizes(in_dim + act_dim, 1),
                OutputActivation::Linear,
                &mut rng,
            )?)
        } else {
            None
        };
        let target_policy = critic.as_ref().map(|_| policy.clone());
        Ok(Agent {
            obs_dim,
            goal_dim,
            act_dim,
            normalizer: Normalizer::new(in_dim),
            policy_opt: AdamState::new(&policy),
            critic_opt: critic.as_ref().map(AdamState::new),
            target_critic: critic.clone(),
            target_policy,
            critic,
            policy,
            queue: AdvantageQueue::new(config.weights.queue_capacity),
            train_step: 0,
            config,
        })
    }

    /// Normalized `[state, goal]` rows.
    pub fn policy_input(&self, states: &[f32], goals: &[f32], n: usize) -> Result<Vec<f32>> {
        if states.len() != n * self.obs_dim || goals.len() != n * self.goal_dim {
            return Err(invalid("state or goal length mismatch"));
        }
        let mut x = concat_rows(states, self.obs_dim, goals, self.goal_dim, n);
        self.normalizer.normalize_in_place(&mut x)?;
        Ok(x)
    }

    /// Deterministic policy mean.
    pub fn act(&self, states: &[f32], goals: &[f32], n: usize) -> Result<Vec<f32>> {
        self.policy.predict(&self.policy_input(states, goals, n)?, n)
    }

    /// `Q(x, π(x))` for normalized policy inputs `x`.
    fn state_values(&self, critic: &MlpParams<f32>, policy: &MlpParams<f32>, x: &[f32], n: usize) -> Result<Vec<f32>> {
        let a = policy.predict(x, n)?;
        self.q_values(critic, x, &a, n)
    }

    fn q_values(&self, critic: &MlpParams<f32>, x: &[f32], actions: &[f32], n: usize) -> Result<Vec<f32>> {
        let input = concat_rows(x, self.obs_dim + self.goal_dim, actions, self.act_dim, n);
        critic.predict(&input, n)
    }

    fn check_batch(&self, batch: &RelabeledBatch) -> Result<()> {
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        if (batch.obs_dim, batch.goal_dim, batch.act_dim) != (self.obs_dim, self.goal_dim, self.act_dim) {
            return Err(config("batch dimensions do not match the agent"));
        }
        Ok(())
    }

    /// One TD step on the critic followed by Polyak averaging of both
    /// targets. Returns the mean squared TD error before the step.
    pub fn critic_td_update(&mut self, batch: &RelabeledBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let (Some(critic), Some(target_policy), Some(target_critic)) =
            (&self.critic, &self.target_policy, &self.target_critic)
        else {
            return Err(config(format!("{} has no critic", self.config.algo)));
        };
        let n = batch.len();
        let x_next = self.policy_input(&batch.next_states, &batch.goals, n)?;
        let next_q = self.state_values(target_critic, target_policy, &x_next, n)?;
        let y = td_targets(&batch.rewards, &next_q, self.config.rl_gamma);
        let x = self.policy_input(&batch.states, &batch.goals, n)?;
        let input = concat_rows(&x, self.obs_dim + self.goal_dim, &batch.actions, self.act_dim, n);
        let (loss, grads) = mse_loss_grad(critic, &input, n, &y)?;

        let lr = self.config.learning_rate;
        let critic = self.critic.as_mut().expect("checked above");
        self.critic_opt
            .as_mut()
            .expect("critic has optimizer")
            .update(critic, &grads, lr)?;
        let c = self.config.polyak;
        polyak_update(self.target_critic.as_mut().expect("checked above"), critic, c)?;
        polyak_update(self.target_policy.as_mut().expect("checked above"), &self.policy, c)?;
        Ok(loss)
    }

    /// `A = r + γ·V(s', g) − V(s, g)` with the online critic and policy.
    pub fn compute_advantage(&self, batch: &RelabeledBatch) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let critic = self
            .critic
            .as_ref()
            .ok_or_else(|| config(format!("{} has no critic", self.config.algo)))?;
        let n = batch.len();
        let x = self.policy_input(&batch.states, &batch.goals, n)?;
        let x_next = self.policy_input(&batch.next_states, &batch.goals, n)?;
        let v = self.state_values(critic, &self.policy, &x, n)?;
        let v_next = self.state_values(critic, &self.policy, &x_next, n)?;
        let gamma = self.config.rl_gamma;
        Ok((0..n)
            .map(|k| batch.rewards[k] as f64 + gamma * v_next[k] as f64 - v[k] as f64)
            .collect())
    }

    /// One Adam step on `mean w·‖π(s, g) − a‖²`; returns the loss before
    /// the step.
    pub fn actor_update(&mut self, batch: &RelabeledBatch, weights: &[f64]) -> Result<f64> {
        self.check_batch(batch)?;
        if weights.len() != batch.len() {
            return Err(invalid("one weight per transition required"));
        }
        let n = batch.len();
        let x = self.policy_input(&batch.states, &batch.goals, n)?;
        let w: Vec<f32> = weights.iter().map(|&w| w as f32).collect();
        let (loss, grads) = weighted_regression_loss_grad(&self.policy, &x, n, &batch.actions, &w)?;
        self.policy_opt
            .update(&mut self.policy, &grads, self.config.learning_rate)?;
        Ok(loss)
    }

    /// Per-transition weights for the current algorithm. Advantages are only
    /// consulted when the algorithm uses them.
    pub fn batch_weights(
        &self,
        batch: &RelabeledBatch,
        advantages: Option<&[f64]>,
        threshold: f64,
    ) -> Result<Vec<f64>> {
        let n = batch.len();
        let adv = |k: usize| -> Result<f64> {
            advantages
                .map(|a| a[k])
                .ok_or_else(|| config("advantage-based weight needs a critic"))
        };
        match self.config.algo {
            Algo::Gcsl | Algo::GoalBc => Ok(vec![1.0; n]),
            Algo::GoalMarwil => (0..n)
                .map(|k| {
                    Ok(marwil_weight(
                        adv(k)?,
                        self.config.marwil_beta,
                        self.config.weights.clip_bound,
                    ))
                })
                .collect(),
            Algo::Wgcsl => {
                let cfg = &self.config.weights;
                (0..n)
                    .map(|k| {
                        let a = if cfg.needs_critic() { adv(k)? } else { 0.0 };
                        Ok(compute_weight(batch.deltas[k], a, threshold, cfg))
                    })
                    .collect()
            }
        }
    }

    /// One full training step on an already sampled batch.
    pub fn train_on_batch(&mut self, batch: &RelabeledBatch) -> Result<StepStats> {
        self.check_batch(batch)?;
        self.train_step += 1;
        let n = batch.len();
        self.normalizer.update(&concat_rows(
            &batch.states,
            self.obs_dim,
            &batch.goals,
            self.goal_dim,
            n,
        ))?;
        let (td_loss, advantages, threshold) = if self.critic.is_some() {
            let td = self.critic_td_update(batch)?;
            let adv = self.compute_advantage(batch)?;
            self.queue.extend(adv.iter().copied());
            let thr = baw_threshold(&self.queue, self.train_step, &self.config.weights);
            (td, Some(adv), thr)
        } else {
            (f64::NAN, None, f64::NEG_INFINITY)
        };
        let weights = self.batch_weights(batch, advantages.as_deref(), threshold)?;
        let actor_loss = self.actor_update(batch, &weights)?;
        Ok(StepStats {
            td_loss,
            actor_loss,
            mean_weight: weights.iter().sum::<f64>() / n as f64,
        })
    }
}

impl GoalPolicy for Agent {
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }
    fn goal_dim(&self) -> usize {
        self.goal_dim
    }
    fn act_dim(&self) -> usize {
        self.act_dim
    }
    fn act_batch(&self, states: &[f64], goals: &[f64], n: usize) -> Result<Vec<f64>> {
        let s: Vec<f32> = states.iter().map(|&x| x as f32).collect();
        let g: Vec<f32> = goals.iter().map(|&x| x as f32).collect();
        Ok(self.act(&s, &g, n)?.into_iter().map(f64::from).collect())
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub agent: Agent,
    pub metrics: Vec<MetricRow>,
}

/// Seed of the evaluation episodes for a run; independent of the algorithm.
pub fn eval_seed(run_seed: u64) -> u64 {
    derive_seed(run_seed, EVAL_STREAM)
}

pub fn train(config: &TrainConfig, dataset: &OfflineDataset) -> Result<TrainOutput> {
    train_with(config, dataset, |_| {})
}

/// Trains for `config.total_steps`, calling `on_row` after each evaluation.
pub fn train_with(
    config: &TrainConfig,
    dataset: &OfflineDataset,
    mut on_row: impl FnMut(&MetricRow),
) -> Result<TrainOutput> {
    if dataset.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    let m = &dataset.manifest;
    let spec = dataset.env_spec();
    let mut agent = Agent::new(config.clone(), m.obs_dim, m.goal_dim, m.act_dim)?;
    let mut rng = derived_rng(config.seed, SAMPLE_STREAM);
    let prop2_index =
        (config.algo.relabels() && config.relabel == RelabelStrategy::Prop2).then(|| SuffixReturnIndex::new(dataset));
    let p_relabel = config.relabel_probability();
    let eval_seed = eval_seed(config.seed);

    let mut metrics = Vec::new();
    let (mut td_sum, mut actor_sum, mut weight_sum, mut since) = (0.0, 0.0, 0.0, 0u64);
    for step in 1..=config.total_steps {
        let batch = match &prop2_index {
            Some(index) => sample_prop2_batch(dataset, index, config.batch_size, &mut rng)?,
            None => sample_relabeled_batch(dataset, config.batch_size, p_relabel, &mut rng)?,
        };
        let stats = agent.train_on_batch(&batch)?;
        td_sum += stats.td_loss;
        actor_sum += stats.actor_loss;
        weight_sum += stats.mean_weight;
        since += 1;
        let due = (config.eval_every > 0 && step % config.eval_every == 0) || step == config.total_steps;
        if due {
            let report = evaluate(&agent, &spec, config.eval_episodes, eval_seed)?;
            let k = since as f64;
            let row = MetricRow {
                step,
                avg_return: report.avg_return,
                avg_discounted_return: report.avg_discounted_return,
                final_distance: report.final_distance,
                success_rate: report.success_rate,
                td_loss: td_sum / k,
                actor_loss: actor_sum / k,
                mean_weight: weight_sum / k,
            };
            on_row(&row);
            metrics.push(row);
            (td_sum, actor_sum, weight_sum, since) = (0.0, 0.0, 0.0, 0);
        }
    }
    Ok(TrainOutput { agent, metrics })
}

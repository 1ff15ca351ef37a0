//! Hindsight goal relabeling.
//!
//! Indices are zero-based: transition `t ∈ 0..T` moves `states[t]` to
//! `states[t + 1]` and is rewarded on `achieved_goals[t + 1]`. A relabeled
//! goal is `achieved_goals[i]` for some `i ∈ t..=T`, and `delta = i - t` is
//! the gap used by the discounted relabeling weight.

use crate::data::{OfflineDataset, Trajectory};
use crate::env::reward_f32;
use crate::error::{invalid, Result};

/// One transition paired with the goal it is trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct RelabeledTransition {
    pub state: Vec<f32>,
    pub action: Vec<f32>,
    pub next_state: Vec<f32>,
    pub goal_used: Vec<f32>,
    pub reward: f32,
    pub delta: u32,
    pub relabeled: bool,
}

/// Struct-of-arrays minibatch, the form the learners consume.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelabeledBatch {
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub act_dim: usize,
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub next_states: Vec<f32>,
    pub goals: Vec<f32>,
    pub rewards: Vec<f32>,
    pub deltas: Vec<u32>,
    pub relabeled: Vec<bool>,
}

impl RelabeledBatch {
    fn with_capacity(dataset: &OfflineDataset, n: usize) -> Self {
        let m = &dataset.manifest;
        RelabeledBatch {
            obs_dim: m.obs_dim,
            goal_dim: m.goal_dim,
            act_dim: m.act_dim,
            states: Vec::with_capacity(n * m.obs_dim),
            actions: Vec::with_capacity(n * m.act_dim),
            next_states: Vec::with_capacity(n * m.obs_dim),
            goals: Vec::with_capacity(n * m.goal_dim),
            rewards: Vec::with_capacity(n),
            deltas: Vec::with_capacity(n),
            relabeled: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn push(&mut self, traj: &Trajectory<'_>, t: usize, goal: &[f32], delta: usize, relabeled: bool, threshold: f64) {
        self.states.extend_from_slice(traj.state(t));
        self.actions.extend_from_slice(traj.action(t));
        self.next_states.extend_from_slice(traj.state(t + 1));
        self.goals.extend_from_slice(goal);
        self.rewards.push(traj.reward(t, goal, threshold) as f32);
        self.deltas.push(delta as u32);
        self.relabeled.push(relabeled);
    }

    pub fn transition(&self, k: usize) -> RelabeledTransition {
        let (o, g, a) = (self.obs_dim, self.goal_dim, self.act_dim);
        RelabeledTransition {
            state: self.states[k * o..(k + 1) * o].to_vec(),
            action: self.actions[k * a..(k + 1) * a].to_vec(),
            next_state: self.next_states[k * o..(k + 1) * o].to_vec(),
            goal_used: self.goals[k * g..(k + 1) * g].to_vec(),
            reward: self.rewards[k],
            delta: self.deltas[k],
            relabeled: self.relabeled[k],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = RelabeledTransition> + '_ {
        (0..self.len()).map(|k| self.transition(k))
    }
}

/// Uniform future index `i ∈ t..=horizon`.
pub fn sample_future_index(t: usize, horizon: usize, rng: &mut impl rand::Rng) -> usize {
    debug_assert!(t <= horizon);
    rng.random_range(t..=horizon)
}

/// Draws `batch_size` transitions uniformly over trajectories and time steps.
/// With probability `p_relabel` the goal becomes a uniformly chosen future
/// achieved goal; otherwise the trajectory's desired goal is kept.
pub fn sample_relabeled_batch(
    dataset: &OfflineDataset,
    batch_size: usize,
    p_relabel: f64,
    rng: &mut impl rand::Rng,
) -> Result<RelabeledBatch> {
    if dataset.is_empty() {
        return Err(invalid("cannot sample from an empty dataset"));
    }
    if !(0.0..=1.0).contains(&p_relabel) {
        return Err(invalid(format!("p_relabel {p_relabel} outside [0, 1]")));
    }
    let threshold = dataset.env_spec().threshold;
    let horizon = dataset.horizon();
    let mut batch = RelabeledBatch::with_capacity(dataset, batch_size);
    for _ in 0..batch_size {
        let traj = dataset.trajectory(rng.random_range(0..dataset.n_traj()));
        let t = rng.random_range(0..horizon);
        if rng.random::<f64>() < p_relabel {
            let i = sample_future_index(t, horizon, rng);
            batch.push(&traj, t, traj.achieved_goal(i), i - t, true, threshold);
        } else {
            batch.push(&traj, t, traj.desired_goal, 0, false, threshold);
        }
    }
    Ok(batch)
}

/// Lookup structures for the return-dominance relabeling strategy.
///
/// For every trajectory it records undiscounted suffix returns against its
/// own desired goal and the first step from which that goal is still reached.
/// Desired goals are bucketed on a grid of cell size `threshold` so that the
/// ε-ball goal match only touches neighboring cells.
#[derive(Debug, Clone)]
pub struct SuffixReturnIndex {
    horizon: usize,
    threshold: f64,
    /// `suffix_returns[j * (T + 1) + t]` = Σ_{k ≥ t} r_k for trajectory `j`.
    suffix_returns: Vec<u32>,
    /// Last transition index whose reward is 1 for the original goal.
    last_success: Vec<Option<usize>>,
    cells: std::collections::HashMap<(i64, i64), Vec<usize>>,
    goals: Vec<[f64; 2]>,
}

impl SuffixReturnIndex {
    pub fn new(dataset: &OfflineDataset) -> Self {
        assert_eq!(dataset.manifest.goal_dim, 2, "goal grid assumes planar goals");
        let threshold = dataset.env_spec().threshold;
        let horizon = dataset.horizon();
        let mut suffix_returns = vec![0u32; dataset.n_traj() * (horizon + 1)];
        let mut last_success = Vec::with_capacity(dataset.n_traj());
        let mut cells: std::collections::HashMap<(i64, i64), Vec<usize>> = Default::default();
        let mut goals = Vec::with_capacity(dataset.n_traj());
        for (j, traj) in dataset.trajectories().enumerate() {
            let row = &mut suffix_returns[j * (horizon + 1)..(j + 1) * (horizon + 1)];
            let mut last = None;
            for t in (0..horizon).rev() {
                let r = traj.reward(t, traj.desired_goal, threshold) as u32;
                if r == 1 && last.is_none() {
                    last = Some(t);
                }
                row[t] = row[t + 1] + r;
            }
            last_success.push(last);
            let g = [traj.desired_goal[0] as f64, traj.desired_goal[1] as f64];
            cells.entry(cell_of(g, threshold)).or_default().push(j);
            goals.push(g);
        }
        SuffixReturnIndex {
            horizon,
            threshold,
            suffix_returns,
            last_success,
            cells,
            goals,
        }
    }

    /// Original-goal return of trajectory `j` over transitions `t..T`.
    pub fn suffix_return(&self, j: usize, t: usize) -> u32 {
        self.suffix_returns[j * (self.horizon + 1) + t]
    }

    /// Whether trajectory `j` still earns reward for its own goal at some
    /// transition `k ≥ t`.
    pub fn reaches_goal_from(&self, j: usize, t: usize) -> bool {
        self.last_success[j].is_some_and(|last| last >= t)
    }

    /// Best original suffix return from step `t` among trajectories whose
    /// desired goal lies within the threshold of `goal`.
    pub fn best_matching_return(&self, goal: [f64; 2], t: usize) -> Option<u32> {
        let (cx, cy) = cell_of(goal, self.threshold);
        let mut best: Option<u32> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(members) = self.cells.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in members {
                    let g = self.goals[j];
                    let d2 = (g[0] - goal[0]).powi(2) + (g[1] - goal[1]).powi(2);
                    if d2.sqrt() <= self.threshold {
                        let r = self.suffix_return(j, t);
                        best = Some(best.map_or(r, |b| b.max(r)));
                    }
                }
            }
        }
        best
    }
}

fn cell_of(g: [f64; 2], size: f64) -> (i64, i64) {
    ((g[0] / size).floor() as i64, (g[1] / size).floor() as i64)
}

/// Outcome of the return-dominance strategy for one `(trajectory, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prop2Choice {
    /// `Some(i)` when the goal was replaced by `achieved_goals[i]`.
    pub relabel_index: Option<usize>,
    /// A relabel was proposed but failed the dominance test.
    pub rejected: bool,
}

/// Keeps the original goal when the trajectory still reaches it from `t`.
/// Otherwise proposes `i ~ U[t, T]` and accepts `achieved_goals[i]` only if
/// the relabeled suffix return strictly beats every original suffix from the
/// same step whose goal matches it.
pub fn prop2_choice(
    dataset: &OfflineDataset,
    index: &SuffixReturnIndex,
    j: usize,
    t: usize,
    rng: &mut impl rand::Rng,
) -> Prop2Choice {
    if index.reaches_goal_from(j, t) {
        return Prop2Choice {
            relabel_index: None,
            rejected: false,
        };
    }
    let traj = dataset.trajectory(j);
    let horizon = dataset.horizon();
    let i = sample_future_index(t, horizon, rng);
    let candidate = traj.achieved_goal(i);
    let relabeled_return: u32 = (t..horizon)
        .map(|k| reward_f32(traj.achieved_goal(k + 1), candidate, index.threshold) as u32)
        .sum();
    let goal = [candidate[0] as f64, candidate[1] as f64];
    let accept = index
        .best_matching_return(goal, t)
        .is_none_or(|best| relabeled_return > best);
    if accept {
        Prop2Choice {
            relabel_index: Some(i),
            rejected: false,
        }
    } else {
        Prop2Choice {
            relabel_index: None,
            rejected: true,
        }
    }
}

/// A dataset with one training goal per transition.
#[derive(Debug, Clone)]
pub struct RelabeledDataset {
    pub base: OfflineDataset,
    /// `goals[(j * T + t) * goal_dim ..]`
    pub goals: Vec<f32>,
    pub deltas: Vec<u32>,
    pub relabeled: Vec<bool>,
}

impl RelabeledDataset {
    pub fn goal(&self, j: usize, t: usize) -> &[f32] {
        let g = self.base.manifest.goal_dim;
        let k = j * self.base.horizon() + t;
        &self.goals[k * g..(k + 1) * g]
    }

    pub fn reward(&self, j: usize, t: usize) -> f64 {
        let threshold = self.base.env_spec().threshold;
        self.base.trajectory(j).reward(t, self.goal(j, t), threshold)
    }
}

/// Applies [`prop2_choice`] to every transition of `dataset`.
pub fn relabel_prop2(dataset: &OfflineDataset, rng: &mut impl rand::Rng) -> Result<RelabeledDataset> {
    if dataset.n_traj() == 0 {
        return Err(invalid("empty dataset"));
    }
    let index = SuffixReturnIndex::new(dataset);
    let horizon = dataset.horizon();
    let n = dataset.n_transitions();
    let mut goals = Vec::with_capacity(n * dataset.manifest.goal_dim);
    let mut deltas = Vec::with_capacity(n);
    let mut relabeled = Vec::with_capacity(n);
    for j in 0..dataset.n_traj() {
        let traj = dataset.trajectory(j);
        for t in 0..horizon {
            let choice = prop2_choice(dataset, &index, j, t, rng);
            match choice.relabel_index {
                Some(i) => {
                    goals.extend_from_slice(traj.achieved_goal(i));
                    deltas.push((i - t) as u32);
                    relabeled.push(true);
                }
                None => {
                    goals.extend_from_slice(traj.desired_goal);
                    deltas.push(0);
                    relabeled.push(false);
                }
            }
        }
    }
    Ok(RelabeledDataset {
        base: dataset.clone(),
        goals,
        deltas,
        relabeled,
    })
}

/// Minibatch drawn with the return-dominance strategy applied on the fly.
pub fn sample_prop2_batch(
    dataset: &OfflineDataset,
    index: &SuffixReturnIndex,
    batch_size: usize,
    rng: &mut impl rand::Rng,
) -> Result<RelabeledBatch> {
    if dataset.is_empty() {
        return Err(invalid("cannot sample from an empty dataset"));
    }
    let threshold = dataset.env_spec().threshold;
    let horizon = dataset.horizon();
    let mut batch = RelabeledBatch::with_capacity(dataset, batch_size);
    for _ in 0..batch_size {
        let j = rng.random_range(0..dataset.n_traj());
        let t = rng.random_range(0..horizon);
        let traj = dataset.trajectory(j);
        match prop2_choice(dataset, index, j, t, rng).relabel_index {
            Some(i) => batch.push(&traj, t, traj.achieved_goal(i), i - t, true, threshold),
            None => batch.push(&traj, t, traj.desired_goal, 0, false, threshold),
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{collect, BehaviorPolicy, Collector, Manifest, FORMAT_VERSION};
    use crate::env::{step, EnvId, EnvSpec};
    use crate::rng::rng_from_seed;
    use rand::Rng as _;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn random_dataset(n: usize) -> OfflineDataset {
        collect(&EnvSpec::point_reach(), BehaviorPolicy::Random, n, 21).unwrap()
    }

    #[test]
    fn last_step_forces_final_index() {
        let mut rng = rng_from_seed(0);
        for _ in 0..100 {
            assert_eq!(sample_future_index(50, 50, &mut rng), 50);
        }
    }

    #[test]
    fn no_relabel_keeps_desired_goal() {
        let d = random_dataset(10);
        let mut rng = rng_from_seed(1);
        let batch = sample_relabeled_batch(&d, 500, 0.0, &mut rng).unwrap();
        for tr in batch.iter() {
            assert!(!tr.relabeled);
            assert_eq!(tr.delta, 0);
            let matches = d.trajectories().any(|traj| traj.desired_goal == &tr.goal_used[..]);
            assert!(matches);
        }
    }

    #[test]
    fn empty_or_bad_inputs_rejected() {
        let mut d = random_dataset(1);
        let mut rng = rng_from_seed(1);
        assert!(sample_relabeled_batch(&d, 4, 1.5, &mut rng).is_err());
        d.manifest.n_traj = 0;
        d.states.clear();
        d.actions.clear();
        d.achieved_goals.clear();
        d.desired_goals.clear();
        assert!(sample_relabeled_batch(&d, 4, 0.5, &mut rng).is_err());
    }

    #[test]
    fn rewards_match_recomputation_and_delta_invariant() {
        let d = random_dataset(30);
        let mut rng = rng_from_seed(2);
        for _ in 0..20 {
            let batch = sample_relabeled_batch(&d, 256, 0.8, &mut rng).unwrap();
            for tr in batch.iter() {
                let dist = ((tr.next_state[0] as f64 - tr.goal_used[0] as f64).powi(2)
                    + (tr.next_state[1] as f64 - tr.goal_used[1] as f64).powi(2))
                .sqrt();
                assert_eq!(tr.reward, if dist <= 1.0 { 1.0 } else { 0.0 });
                if tr.delta == 0 && tr.relabeled {
                    // i == t: the goal is the current achieved goal
                    assert_eq!(tr.goal_used, tr.state);
                }
                assert!(tr.delta as usize <= 50);
            }
        }
    }

    #[test]
    fn same_step_relabel_rewards_only_staying_close() {
        // i = t relabels to the current position; the reward must then equal
        // whether the replayed step stays within the radius.
        let spec = EnvSpec::point_reach();
        let d = random_dataset(20);
        for traj in d.trajectories() {
            for t in 0..traj.horizon() {
                let s = [traj.state(t)[0] as f64, traj.state(t)[1] as f64];
                let a = [traj.action(t)[0] as f64, traj.action(t)[1] as f64];
                let next = step(&spec, s, a).unwrap();
                let stays = ((next[0] - s[0]).powi(2) + (next[1] - s[1]).powi(2)).sqrt() <= 1.0;
                let r = traj.reward(t, traj.achieved_goal(t), 1.0);
                assert_eq!(r == 1.0, stays);
            }
        }
    }

    #[test]
    fn relabel_fraction_and_future_index_uniformity() {
        let d = random_dataset(40);
        let mut rng = rng_from_seed(3);
        let horizon = 50;
        let n = 1_000_000;
        let batch = sample_relabeled_batch(&d, n, 0.8, &mut rng).unwrap();
        let frac = batch.relabeled.iter().filter(|&&r| r).count() as f64 / n as f64;
        assert!((0.79..=0.81).contains(&frac), "relabeled fraction {frac}");

        // Recover t from the transition, then test that delta is uniform on
        // 0..=T-t. Pooled over t via per-t chi-square statistics.
        let mut counts: Vec<Vec<u64>> = (0..horizon).map(|t| vec![0; horizon - t + 1]).collect();
        let mut rng = rng_from_seed(4);
        for _ in 0..n {
            let t = rng.random_range(0..horizon);
            if rng.random::<f64>() < 0.8 {
                let i = sample_future_index(t, horizon, &mut rng);
                counts[t][i - t] += 1;
            }
        }
        let mut stat = 0.0;
        let mut dof = 0.0;
        for row in &counts {
            let total: u64 = row.iter().sum();
            let expected = total as f64 / row.len() as f64;
            stat += row
                .iter()
                .map(|&c| (c as f64 - expected).powi(2) / expected)
                .sum::<f64>();
            dof += (row.len() - 1) as f64;
        }
        let critical = ChiSquared::new(dof).unwrap().inverse_cdf(0.999);
        assert!(stat < critical, "chi2 {stat} vs critical {critical} (dof {dof})");
    }

    /// Hand-built dataset of three horizontal trajectories on PointReach.
    fn three_trajectories() -> OfflineDataset {
        let horizon = 4;
        // traj 0: 0 → 4 along y=0, goal at (4,0): reaches it at the end
        // traj 1: 0 → -4 along y=3, goal (4,3): never reaches
        // traj 2: stays near (-4,-4), goal (-1,3): never reaches
        let paths: [[[f32; 2]; 5]; 3] = [
            [[0., 0.], [1., 0.], [2., 0.], [3., 0.], [4., 0.]],
            [[0., 3.], [-1., 3.], [-2., 3.], [-3., 3.], [-4., 3.]],
            [[-4., -4.], [-4., -4.], [-3.5, -4.], [-4., -4.], [-4., -4.]],
        ];
        let goals: [[f32; 2]; 3] = [[4., 0.], [4., 3.], [-1., 3.]];
        let mut states = Vec::new();
        let mut actions = Vec::new();
        for p in &paths {
            for t in 0..=horizon {
                states.extend_from_slice(&p[t]);
            }
            for t in 0..horizon {
                actions.extend_from_slice(&[p[t + 1][0] - p[t][0], p[t + 1][1] - p[t][1]]);
            }
        }
        let manifest = Manifest {
            env_id: EnvId::PointReach,
            obs_dim: 2,
            goal_dim: 2,
            act_dim: 2,
            horizon,
            n_traj: 3,
            collector: Collector::Random,
            noise_sigma: 0.0,
            seed: 0,
            format_version: FORMAT_VERSION,
        };
        let desired = goals.iter().flatten().copied().collect();
        OfflineDataset::from_parts(manifest, states.clone(), actions, states, desired).unwrap()
    }

    #[test]
    fn prop2_keeps_goal_while_still_reachable() {
        let d = three_trajectories();
        let mut rng = rng_from_seed(5);
        let r = relabel_prop2(&d, &mut rng).unwrap();
        // trajectory 0 reaches (4,0) at its last transitions
        for t in 0..4 {
            assert!(!r.relabeled[t]);
            assert_eq!(r.goal(0, t), &[4.0, 0.0]);
        }
    }

    #[test]
    fn prop2_single_failing_trajectory_accepts_everything() {
        let mut d = three_trajectories();
        // keep only trajectory 1
        let keep = |v: &Vec<f32>, per: usize| v[per..2 * per].to_vec();
        d.states = keep(&d.states, 10);
        d.achieved_goals = keep(&d.achieved_goals, 10);
        d.actions = keep(&d.actions, 8);
        d.desired_goals = keep(&d.desired_goals, 2);
        d.manifest.n_traj = 1;
        for seed in 0..20 {
            let r = relabel_prop2(&d, &mut rng_from_seed(seed)).unwrap();
            assert!(r.relabeled.iter().all(|&x| x));
        }
    }

    #[test]
    fn prop2_accepted_relabels_dominate_brute_force() {
        let d = three_trajectories();
        let threshold = 1.0;
        let horizon = d.horizon();
        let own_suffix = |j: usize, t: usize| -> u32 {
            let traj = d.trajectory(j);
            (t..horizon)
                .map(|k| traj.reward(k, traj.desired_goal, threshold) as u32)
                .sum()
        };
        let mut accepted = 0;
        for seed in 0..200 {
            let r = relabel_prop2(&d, &mut rng_from_seed(seed)).unwrap();
            for j in 0..3 {
                let traj = d.trajectory(j);
                for t in 0..horizon {
                    let k = j * horizon + t;
                    if !r.relabeled[k] {
                        continue;
                    }
                    accepted += 1;
                    // the original goal must be unreachable from t
                    assert!((t..horizon).all(|k| traj.reward(k, traj.desired_goal, threshold) == 0.0));
                    let goal = r.goal(j, t);
                    let ret: u32 = (t..horizon).map(|k| traj.reward(k, goal, threshold) as u32).sum();
                    for other in 0..3 {
                        let og = d.trajectory(other).desired_goal;
                        let gd = ((og[0] - goal[0]).powi(2) + (og[1] - goal[1]).powi(2)).sqrt();
                        if gd as f64 <= threshold {
                            assert!(ret > own_suffix(other, t), "seed {seed} j {j} t {t}");
                        }
                    }
                }
            }
        }
        assert!(accepted > 0);
    }

    #[test]
    fn prop2_batch_matches_strategy() {
        let d = random_dataset(50);
        let index = SuffixReturnIndex::new(&d);
        let mut rng = rng_from_seed(9);
        let b = sample_prop2_batch(&d, &index, 300, &mut rng).unwrap();
        assert_eq!(b.len(), 300);
        for tr in b.iter() {
            let dist =
                ((tr.next_state[0] - tr.goal_used[0]).powi(2) + (tr.next_state[1] - tr.goal_used[1]).powi(2)).sqrt();
            assert_eq!(tr.reward, if dist as f64 <= 1.0 { 1.0 } else { 0.0 });
        }
    }
}

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Exp1};

use super::{DiscreteGcMdp, TabularPolicy};
use crate::error::Result;
use crate::rng::Rng;

/// Size ranges for random instances. Every instance has at least two
/// states and actions; goals never outnumber states.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceShape {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_goals: usize,
    pub max_horizon: usize,
    pub gammas: Vec<f64>,
}

impl Default for InstanceShape {
    fn default() -> Self {
        InstanceShape {
            max_states: 4,
            max_actions: 4,
            max_goals: 4,
            max_horizon: 3,
            gammas: vec![0.5, 0.9, 1.0],
        }
    }
}

/// Dirichlet(1, …, 1) via normalized unit exponentials.
fn dirichlet_ones(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).map(|e: f64| e.max(1e-12)).collect();
    let z: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= z);
    x
}

struct Sizes {
    states: usize,
    actions: usize,
    goals: usize,
    horizon: usize,
    gamma: f64,
}

fn draw_sizes(shape: &InstanceShape, rng: &mut Rng) -> Sizes {
    let states = rng.random_range(2..=shape.max_states.max(2));
    Sizes {
        states,
        actions: rng.random_range(2..=shape.max_actions.max(2)),
        goals: rng.random_range(1..=shape.max_goals.min(states).max(1)),
        horizon: rng.random_range(1..=shape.max_horizon.max(1)),
        gamma: *shape.gammas.choose(rng).unwrap_or(&1.0),
    }
}

/// Surjective `φ`: each goal owns at least one state.
fn surjective_phi(states: usize, goals: usize, rng: &mut Rng) -> Vec<usize> {
    let mut phi: Vec<usize> = (0..states)
        .map(|s| if s < goals { s } else { rng.random_range(0..goals) })
        .collect();
    phi.shuffle(rng);
    phi
}

/// Random MDP with Dirichlet(1) transition rows, start and goal
/// distributions.
pub fn random_mdp(shape: &InstanceShape, rng: &mut Rng) -> Result<DiscreteGcMdp> {
    let z = draw_sizes(shape, rng);
    let mut transition = Vec::with_capacity(z.states * z.actions * z.states);
    for _ in 0..z.states * z.actions {
        transition.extend(dirichlet_ones(z.states, rng));
    }
    let phi = surjective_phi(z.states, z.goals, rng);
    let init = dirichlet_ones(z.states, rng);
    let goals = dirichlet_ones(z.goals, rng);
    DiscreteGcMdp::new(
        z.states, z.actions, z.goals, transition, phi, init, goals, z.horizon, z.gamma,
    )
}

/// Random MDP whose every `(s, a)` has a single successor.
pub fn random_deterministic_mdp(shape: &InstanceShape, rng: &mut Rng) -> Result<DiscreteGcMdp> {
    let z = draw_sizes(shape, rng);
    let mut transition = vec![0.0; z.states * z.actions * z.states];
    for row in transition.chunks_exact_mut(z.states) {
        row[rng.random_range(0..z.states)] = 1.0;
    }
    let phi = surjective_phi(z.states, z.goals, rng);
    let init = dirichlet_ones(z.states, rng);
    let goals = dirichlet_ones(z.goals, rng);
    DiscreteGcMdp::new(
        z.states, z.actions, z.goals, transition, phi, init, goals, z.horizon, z.gamma,
    )
}

/// Stationary policy with Dirichlet(1) rows; strictly positive.
pub fn random_policy(mdp: &DiscreteGcMdp, rng: &mut Rng) -> TabularPolicy {
    let mut probs = Vec::with_capacity(mdp.n_states * mdp.n_goals * mdp.n_actions);
    for _ in 0..mdp.n_states * mdp.n_goals {
        probs.extend(dirichlet_ones(mdp.n_actions, rng));
    }
    TabularPolicy {
        n_times: 1,
        n_states: mdp.n_states,
        n_goals: mdp.n_goals,
        n_actions: mdp.n_actions,
        probs,
    }
}

//! Exact finite-MDP oracle for the weighting theory.
//!
//! Time is 1-based here, following the trajectory notation
//! `τ = (s_1, a_1, …, s_T, a_T)` with reward `1[φ(s_i) = g]` collected at
//! every visited state `s_1..s_T`. Internally arrays are 0-based, so the
//! value at time `t` lives at index `t − 1`.

mod checks;
mod exact;
mod random;
mod report;

pub use checks::{
    check_corollary1, check_prop1, check_prop2, check_theorem1, check_theorem1_with, grad_match, grad_match_at,
    Prop1Config, Prop2Data, Prop2Outcome, Theorem1Report, CHECK_TOLERANCE,
};
pub use exact::{
    exact_j, exact_j_gcsl, exact_j_surr, exact_j_wgcsl, exact_policy_eval, for_each_trajectory, q_values, ValueTable,
};
pub use random::{random_deterministic_mdp, random_mdp, random_policy, InstanceShape};
pub use report::{run_check, CheckKind, CheckReport, GRAD_MATCH_TOLERANCE};

use crate::error::{invalid, Result};

pub const MAX_STATES: usize = 6;
pub const MAX_ACTIONS: usize = 6;
pub const MAX_GOALS: usize = 6;
pub const MAX_HORIZON: usize = 4;
const SUM_TOLERANCE: f64 = 1e-12;

/// Finite goal-conditioned MDP with horizon `T` and discount `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGcMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_goals: usize,
    /// `P[s][a][s']`, flattened.
    pub transition: Vec<f64>,
    pub phi: Vec<usize>,
    pub init_dist: Vec<f64>,
    pub goal_dist: Vec<f64>,
    pub horizon: usize,
    pub gamma: f64,
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(invalid(format!("{name} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(invalid(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

impl DiscreteGcMdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        n_goals: usize,
        transition: Vec<f64>,
        phi: Vec<usize>,
        init_dist: Vec<f64>,
        goal_dist: Vec<f64>,
        horizon: usize,
        gamma: f64,
    ) -> Result<Self> {
        let mdp = DiscreteGcMdp {
            n_states,
            n_actions,
            n_goals,
            transition,
            phi,
            init_dist,
            goal_dist,
            horizon,
            gamma,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, a, g) = (self.n_states, self.n_actions, self.n_goals);
        if s == 0 || a == 0 || g == 0 || self.horizon == 0 {
            return Err(invalid("MDP sizes and horizon must be positive"));
        }
        if self.transition.len() != s * a * s
            || self.phi.len() != s
            || self.init_dist.len() != s
            || self.goal_dist.len() != g
        {
            return Err(invalid("MDP table shapes are inconsistent"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if self.phi.iter().any(|&x| x >= g) {
            return Err(invalid("phi maps a state outside the goal set"));
        }
        for (k, row) in self.transition.chunks_exact(s).enumerate() {
            check_distribution(&format!("P[{}][{}]", k / a, k % a), row)?;
        }
        check_distribution("init_dist", &self.init_dist)?;
        check_distribution("goal_dist", &self.goal_dist)?;
        Ok(())
    }

    /// Enumeration size caps.
    pub fn check_enumerable(&self) -> Result<()> {
        if self.n_states > MAX_STATES
            || self.n_actions > MAX_ACTIONS
            || self.n_goals > MAX_GOALS
            || self.horizon > MAX_HORIZON
        {
            return Err(invalid(format!(
                "instance too large to enumerate: |S|={}, |A|={}, |G|={}, T={} (caps {MAX_STATES}, {MAX_ACTIONS}, {MAX_GOALS}, {MAX_HORIZON})",
                self.n_states, self.n_actions, self.n_goals, self.horizon
            )));
        }
        Ok(())
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let k = (s * self.n_actions + a) * self.n_states;
        &self.transition[k..k + self.n_states]
    }

    pub fn is_deterministic(&self) -> bool {
        self.transition
            .chunks_exact(self.n_states)
            .all(|row| row.iter().filter(|&&p| p > 0.0).count() == 1)
    }

    /// Every goal is `φ(s)` for some state.
    pub fn phi_is_surjective(&self) -> bool {
        (0..self.n_goals).all(|g| self.phi.contains(&g))
    }

    pub fn indicator(&self, s: usize, g: usize) -> f64 {
        if self.phi[s] == g {
            1.0
        } else {
            0.0
        }
    }
}

/// `π[t][s][g][a]`; a stationary policy has a single time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub n_times: usize,
    pub n_states: usize,
    pub n_goals: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_goals: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        Self::time_indexed(1, n_states, n_goals, n_actions, probs)
    }

    pub fn time_indexed(
        n_times: usize,
        n_states: usize,
        n_goals: usize,
        n_actions: usize,
        probs: Vec<f64>,
    ) -> Result<Self> {
        if probs.len() != n_times * n_states * n_goals * n_actions || n_actions == 0 || n_times == 0 {
            return Err(invalid("policy table shape mismatch"));
        }
        for (k, row) in probs.chunks_exact(n_actions).enumerate() {
            check_distribution(&format!("policy row {k}"), row)?;
        }
        Ok(TabularPolicy {
            n_times,
            n_states,
            n_goals,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_goals: usize, n_actions: usize) -> Self {
        TabularPolicy {
            n_times: 1,
            n_states,
            n_goals,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_goals * n_actions],
        }
    }

    /// Row-wise softmax of `logits[s][g][a]`.
    pub fn softmax(n_states: usize, n_goals: usize, n_actions: usize, logits: &[f64]) -> Result<Self> {
        if logits.len() != n_states * n_goals * n_actions {
            return Err(invalid("logit table shape mismatch"));
        }
        let mut probs = Vec::with_capacity(logits.len());
        for row in logits.chunks_exact(n_actions) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            probs.extend(exps.iter().map(|e| e / z));
        }
        Ok(TabularPolicy {
            n_times: 1,
            n_states,
            n_goals,
            n_actions,
            probs,
        })
    }

    /// Action distribution at 1-based time `t`.
    pub fn row(&self, t: usize, s: usize, g: usize) -> &[f64] {
        let slice = if self.n_times == 1 { 0 } else { t - 1 };
        let k = ((slice * self.n_states + s) * self.n_goals + g) * self.n_actions;
        &self.probs[k..k + self.n_actions]
    }

    pub fn prob(&self, t: usize, s: usize, g: usize, a: usize) -> f64 {
        self.row(t, s, g)[a]
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    pub fn check_matches(&self, mdp: &DiscreteGcMdp) -> Result<()> {
        if (self.n_states, self.n_goals, self.n_actions) != (mdp.n_states, mdp.n_goals, mdp.n_actions) {
            return Err(invalid("policy shape does not match MDP"));
        }
        if self.n_times != 1 && self.n_times < mdp.horizon {
            return Err(invalid("time-indexed policy shorter than the horizon"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;

use super::{DiscreteGcMdp, TabularPolicy};
use crate::error::{invalid, Result};

/// `V[t][s][g]` for `t = 1..=T + 1`, stored at index `t − 1`; the last
/// slice is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub horizon: usize,
    pub n_states: usize,
    pub n_goals: usize,
    pub values: Vec<f64>,
}

impl ValueTable {
    fn zeros(mdp: &DiscreteGcMdp) -> Self {
        ValueTable {
            horizon: mdp.horizon,
            n_states: mdp.n_states,
            n_goals: mdp.n_goals,
            values: vec![0.0; (mdp.horizon + 1) * mdp.n_states * mdp.n_goals],
        }
    }

    fn index(&self, t: usize, s: usize, g: usize) -> usize {
        debug_assert!((1..=self.horizon + 1).contains(&t));
        ((t - 1) * self.n_states + s) * self.n_goals + g
    }

    /// Value at 1-based time `t`.
    pub fn get(&self, t: usize, s: usize, g: usize) -> f64 {
        self.values[self.index(t, s, g)]
    }

    fn set(&mut self, t: usize, s: usize, g: usize, v: f64) {
        let k = self.index(t, s, g);
        self.values[k] = v;
    }
}

/// Backward induction:
/// `V[t][s][g] = 1[φ(s)=g] + γ·Σ_a π(a|s,g)·Σ_{s'} P(s'|s,a)·V[t+1][s'][g]`.
pub fn exact_policy_eval(mdp: &DiscreteGcMdp, pi: &TabularPolicy) -> Result<ValueTable> {
    pi.check_matches(mdp)?;
    let mut v = ValueTable::zeros(mdp);
    for t in (1..=mdp.horizon).rev() {
        for g in 0..mdp.n_goals {
            for s in 0..mdp.n_states {
                let mut future = 0.0;
                for (a, &pa) in pi.row(t, s, g).iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    let cont: f64 = mdp
                        .next_dist(s, a)
                        .iter()
                        .enumerate()
                        .map(|(s2, &p)| p * v.get(t + 1, s2, g))
                        .sum();
                    future += pa * cont;
                }
                v.set(t, s, g, mdp.indicator(s, g) + mdp.gamma * future);
            }
        }
    }
    Ok(v)
}

/// `Q[t][s][g][a] = 1[φ(s)=g] + γ·Σ_{s'} P(s'|s,a)·V[t+1][s'][g]`, flattened
/// with index `((t − 1)·|S| + s)·|G|·|A| + g·|A| + a`.
pub fn q_values(mdp: &DiscreteGcMdp, v: &ValueTable) -> Vec<f64> {
    let (ns, ng, na) = (mdp.n_states, mdp.n_goals, mdp.n_actions);
    let mut q = vec![0.0; mdp.horizon * ns * ng * na];
    for t in 1..=mdp.horizon {
        for s in 0..ns {
            for g in 0..ng {
                for a in 0..na {
                    let cont: f64 = mdp
                        .next_dist(s, a)
                        .iter()
                        .enumerate()
                        .map(|(s2, &p)| p * v.get(t + 1, s2, g))
                        .sum();
                    q[(((t - 1) * ns + s) * ng + g) * na + a] = mdp.indicator(s, g) + mdp.gamma * cont;
                }
            }
        }
    }
    q
}

type Visit<'a> = dyn FnMut(usize, &[usize], &[usize], f64) + 'a;

/// Calls `visit(g, states, actions, probability)` for every goal and every
/// trajectory `(s_1, a_1, …, s_T, a_T)` of positive probability under `pi`.
/// The probability includes `p(g)`.
pub fn for_each_trajectory(
    mdp: &DiscreteGcMdp,
    pi: &TabularPolicy,
    mut visit: impl FnMut(usize, &[usize], &[usize], f64),
) -> Result<()> {
    mdp.check_enumerable()?;
    pi.check_matches(mdp)?;
    let t_max = mdp.horizon;
    let mut states = vec![0usize; t_max];
    let mut actions = vec![0usize; t_max];

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        mdp: &DiscreteGcMdp,
        pi: &TabularPolicy,
        g: usize,
        depth: usize,
        prob: f64,
        states: &mut Vec<usize>,
        actions: &mut Vec<usize>,
        visit: &mut Visit<'_>,
    ) {
        let s = states[depth];
        for a in 0..mdp.n_actions {
            let pa = pi.prob(depth + 1, s, g, a);
            if pa == 0.0 {
                continue;
            }
            actions[depth] = a;
            if depth + 1 == mdp.horizon {
                visit(g, states, actions, prob * pa);
                continue;
            }
            for s2 in 0..mdp.n_states {
                let p = mdp.p(s, a, s2);
                if p == 0.0 {
                    continue;
                }
                states[depth + 1] = s2;
                recurse(mdp, pi, g, depth + 1, prob * pa * p, states, actions, visit);
            }
        }
    }

    for g in 0..mdp.n_goals {
        if mdp.goal_dist[g] == 0.0 {
            continue;
        }
        for s1 in 0..mdp.n_states {
            let p0 = mdp.goal_dist[g] * mdp.init_dist[s1];
            if p0 == 0.0 {
                continue;
            }
            states[0] = s1;
            recurse(mdp, pi, g, 0, p0, &mut states, &mut actions, &mut visit);
        }
    }
    Ok(())
}

/// Neumaier-compensated accumulator. Finite-difference gradients divide
/// enumeration sums by `2h`, so summation error must stay near one ulp.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `J(π) = E[Σ_{i=1}^T γ^{i−1}·1[φ(s_i)=g]]` by enumeration.
pub fn exact_j(mdp: &DiscreteGcMdp, pi: &TabularPolicy) -> Result<f64> {
    let mut total = CompensatedSum::default();
    for_each_trajectory(mdp, pi, |g, states, _, p| {
        let ret: f64 = states
            .iter()
            .enumerate()
            .map(|(k, &s)| mdp.gamma.powi(k as i32) * mdp.indicator(s, g))
            .sum();
        total.add(p * ret);
    })?;
    Ok(total.value())
}

fn log_prob(pi: &TabularPolicy, t: usize, s: usize, g: usize, a: usize) -> Result<f64> {
    let p = pi.prob(t, s, g, a);
    if p <= 0.0 {
        return Err(invalid(format!(
            "policy assigns zero probability to a={a} at s={s}, g={g}"
        )));
    }
    Ok(p.ln())
}

/// `(1/T)·E_{τ∼π_b}[Σ_t log π(a_t|s_t,g)·Σ_{i=t}^T γ^{i−1}·1[φ(s_i)=g]]`.
pub fn exact_j_surr(mdp: &DiscreteGcMdp, pi: &TabularPolicy, behavior: &TabularPolicy) -> Result<f64> {
    pi.check_matches(mdp)?;
    let t_max = mdp.horizon;
    let mut total = CompensatedSum::default();
    let mut err = None;
    for_each_trajectory(mdp, behavior, |g, states, actions, p| {
        // suffix[k] = Σ_{i ≥ k} γ^{i}·1[φ(s_{i+1}) = g], 0-based
        let mut suffix = vec![0.0; t_max + 1];
        for k in (0..t_max).rev() {
            suffix[k] = suffix[k + 1] + mdp.gamma.powi(k as i32) * mdp.indicator(states[k], g);
        }
        let mut inner = 0.0;
        for k in 0..t_max {
            if suffix[k] == 0.0 {
                continue;
            }
            match log_prob(pi, k + 1, states[k], g, actions[k]) {
                Ok(lp) => inner += lp * suffix[k],
                Err(e) => err = Some(e),
            }
        }
        total.add(p * inner);
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(total.value() / t_max as f64)
}

/// `E_{g, τ∼π_b, t∼U[1,T], i∼U[t,T]}[w(t, i, s_t, a_t, φ(s_i))·log π(a_t|s_t,φ(s_i))]`
/// with the exact `1/T` and `1/(T − t + 1)` factors.
pub fn exact_j_wgcsl(
    mdp: &DiscreteGcMdp,
    pi: &TabularPolicy,
    behavior: &TabularPolicy,
    weight: impl Fn(usize, usize, usize, usize, usize) -> f64,
) -> Result<f64> {
    pi.check_matches(mdp)?;
    let t_max = mdp.horizon;
    let mut total = 0.0;
    let mut err = None;
    for_each_trajectory(mdp, behavior, |_, states, actions, p| {
        let mut inner = 0.0;
        for t in 1..=t_max {
            let (s, a) = (states[t - 1], actions[t - 1]);
            let mut avg = 0.0;
            for i in t..=t_max {
                let goal = mdp.phi[states[i - 1]];
                match log_prob(pi, t, s, goal, a) {
                    Ok(lp) => avg += weight(t, i, s, a, goal) * lp,
                    Err(e) => err = Some(e),
                }
            }
            inner += avg / (t_max - t + 1) as f64;
        }
        total += p * inner / t_max as f64;
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(total)
}

/// The unweighted case of [`exact_j_wgcsl`].
pub fn exact_j_gcsl(mdp: &DiscreteGcMdp, pi: &TabularPolicy, behavior: &TabularPolicy) -> Result<f64> {
    exact_j_wgcsl(mdp, pi, behavior, |_, _, _, _, _| 1.0)
}

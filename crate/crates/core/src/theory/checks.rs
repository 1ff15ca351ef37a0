use std::collections::HashMap;

use rand::Rng as _;

use super::exact::{
    exact_j, exact_j_gcsl, exact_j_surr, exact_j_wgcsl, exact_policy_eval, for_each_trajectory, q_values,
};
use super::{DiscreteGcMdp, TabularPolicy};
use crate::agent::percentile_in_place;
use crate::error::{invalid, Result};
use crate::rng::rng_from_seed;

pub const CHECK_TOLERANCE: f64 = 1e-9;
pub const FD_STEP: f64 = 1e-6;
/// Gradient components below this magnitude in both vectors are compared
/// absolutely. One ulp of an O(1) objective divided by `2h` is about 1e-10,
/// so smaller components carry no relative precision.
pub const GRAD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Report {
    pub j_surr: f64,
    pub t_j_wgcsl: f64,
    pub t_j_gcsl: f64,
    pub holds: bool,
}

impl Theorem1Report {
    pub fn upper_slack(&self) -> f64 {
        self.j_surr - self.t_j_wgcsl
    }

    pub fn lower_slack(&self) -> f64 {
        self.t_j_wgcsl - self.t_j_gcsl
    }
}

/// Theorem chain with the discounted relabeling weight `γ^{i−t}`.
pub fn check_theorem1(mdp: &DiscreteGcMdp, pi: &TabularPolicy, behavior: &TabularPolicy) -> Result<Theorem1Report> {
    let gamma = mdp.gamma;
    check_theorem1_with(mdp, pi, behavior, |t, i, _, _, _| gamma.powi((i - t) as i32))
}

/// Same chain with an arbitrary weight `w(t, i, s, a, goal)`.
pub fn check_theorem1_with(
    mdp: &DiscreteGcMdp,
    pi: &TabularPolicy,
    behavior: &TabularPolicy,
    weight: impl Fn(usize, usize, usize, usize, usize) -> f64,
) -> Result<Theorem1Report> {
    let t = mdp.horizon as f64;
    let j_surr = exact_j_surr(mdp, pi, behavior)?;
    let t_j_wgcsl = t * exact_j_wgcsl(mdp, pi, behavior, weight)?;
    let t_j_gcsl = t * exact_j_gcsl(mdp, pi, behavior)?;
    let holds = j_surr >= t_j_wgcsl - CHECK_TOLERANCE && t_j_wgcsl >= t_j_gcsl - CHECK_TOLERANCE;
    Ok(Theorem1Report {
        j_surr,
        t_j_wgcsl,
        t_j_gcsl,
        holds,
    })
}

/// Upper bound with `w = γ^{i−t}·h(s_t, a_t, φ(s_i))`, `h` indexed `[s][a][g]`.
/// `holds` covers only `J_surr ≥ T·J_WGCSL`.
pub fn check_corollary1(
    mdp: &DiscreteGcMdp,
    pi: &TabularPolicy,
    behavior: &TabularPolicy,
    h: &[f64],
) -> Result<Theorem1Report> {
    if h.len() != mdp.n_states * mdp.n_actions * mdp.n_goals {
        return Err(invalid("h table shape mismatch"));
    }
    if let Some(bad) = h.iter().find(|&&x| !(x >= 1.0) || !x.is_finite()) {
        return Err(invalid(format!("h must be finite and at least 1, got {bad}")));
    }
    let (gamma, na, ng) = (mdp.gamma, mdp.n_actions, mdp.n_goals);
    let mut report = check_theorem1_with(mdp, pi, behavior, |t, i, s, a, g| {
        gamma.powi((i - t) as i32) * h[(s * na + a) * ng + g]
    })?;
    report.holds = report.j_surr >= report.t_j_wgcsl - CHECK_TOLERANCE;
    Ok(report)
}

fn fd_gradient(logits: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut theta = logits.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let orig = theta[k];
        theta[k] = orig + FD_STEP;
        let plus = f(&theta)?;
        theta[k] = orig - FD_STEP;
        let minus = f(&theta)?;
        theta[k] = orig;
        grad.push((plus - minus) / (2.0 * FD_STEP));
    }
    Ok(grad)
}

fn max_relative_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(GRAD_FLOOR))
        .fold(0.0, f64::max)
}

/// Max relative component difference between `∇J(π_θ)` and
/// `T·∇J_surr(π_θ; π_b)` at `θ = θ_b`, softmax logits indexed `[s][g][a]`.
pub fn grad_match(mdp: &DiscreteGcMdp, behavior_logits: &[f64]) -> Result<f64> {
    grad_match_at(mdp, behavior_logits, behavior_logits)
}

/// As [`grad_match`] but differentiating at `θ`, which need not be `θ_b`.
pub fn grad_match_at(mdp: &DiscreteGcMdp, logits: &[f64], behavior_logits: &[f64]) -> Result<f64> {
    let (ns, ng, na) = (mdp.n_states, mdp.n_goals, mdp.n_actions);
    let behavior = TabularPolicy::softmax(ns, ng, na, behavior_logits)?;
    if logits.len() != behavior_logits.len() {
        return Err(invalid("logit table shape mismatch"));
    }
    let t = mdp.horizon as f64;
    let grad_j = fd_gradient(logits, |th| exact_j(mdp, &TabularPolicy::softmax(ns, ng, na, th)?))?;
    let grad_surr = fd_gradient(logits, |th| {
        Ok(t * exact_j_surr(mdp, &TabularPolicy::softmax(ns, ng, na, th)?, &behavior)?)
    })?;
    Ok(max_relative_difference(&grad_j, &grad_surr))
}

/// Reweighting used by the policy-improvement check: clip bound `M`, floor
/// weight `ε_min` below the threshold, and the threshold percentile over
/// the action set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prop1Config {
    pub clip_max: f64,
    pub eps_min: f64,
    pub percentile: f64,
}

impl Default for Prop1Config {
    fn default() -> Self {
        Prop1Config {
            clip_max: 10.0,
            eps_min: 0.05,
            percentile: 80.0,
        }
    }
}

/// Builds the time-indexed `π̃ ∝ π·clip(exp A, 0, M)·ε(A)` and returns it
/// with the minimum of `V^{π̃} − V^{π}` over all `(t, s, g)`.
pub fn check_prop1(mdp: &DiscreteGcMdp, pi: &TabularPolicy, cfg: Prop1Config) -> Result<(TabularPolicy, f64)> {
    if !pi.is_strictly_positive() {
        return Err(invalid("policy must be strictly positive"));
    }
    if !(cfg.clip_max > 0.0) || !(cfg.eps_min > 0.0 && cfg.eps_min <= 1.0) {
        return Err(invalid("clip_max must be positive and eps_min in (0, 1]"));
    }
    let v = exact_policy_eval(mdp, pi)?;
    let q = q_values(mdp, &v);
    let (ns, ng, na, t_max) = (mdp.n_states, mdp.n_goals, mdp.n_actions, mdp.horizon);
    let mut probs = Vec::with_capacity(q.len());
    let mut adv = vec![0.0; na];
    for t in 1..=t_max {
        for s in 0..ns {
            for g in 0..ng {
                let base = (((t - 1) * ns + s) * ng + g) * na;
                for a in 0..na {
                    adv[a] = q[base + a] - v.get(t, s, g);
                }
                let threshold = percentile_in_place(&mut adv.clone(), cfg.percentile);
                let row = pi.row(t, s, g);
                let weights: Vec<f64> = (0..na)
                    .map(|a| {
                        let eps = if adv[a] >= threshold { 1.0 } else { cfg.eps_min };
                        row[a] * adv[a].exp().min(cfg.clip_max) * eps
                    })
                    .collect();
                let z: f64 = weights.iter().sum();
                probs.extend(weights.iter().map(|w| w / z));
            }
        }
    }
    let improved = TabularPolicy::time_indexed(t_max, ns, ng, na, probs)?;
    let v_new = exact_policy_eval(mdp, &improved)?;
    let min_slack = v_new
        .values
        .iter()
        .zip(&v.values)
        .map(|(a, b)| a - b)
        .fold(f64::INFINITY, f64::min);
    Ok((improved, min_slack))
}

/// Where the dataset for the relabeling check comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prop2Data {
    /// Every trajectory under `π_b`, weighted by its probability; the
    /// uniform relabel draw is split exactly over its support.
    Exact,
    /// `n_traj` sampled rollouts with one relabel draw per `(τ, t)`.
    Sampled { n_traj: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prop2Outcome {
    Inapplicable(String),
    Checked {
        /// `min V^{π_relabel} − V^{π_b}` over compared cells.
        min_slack: f64,
        cells: usize,
        /// Dataset cells whose entries were all relabeled away; their
        /// original value is 0.
        vacated: usize,
        strict_improvements: usize,
        accepted: f64,
        rejected: f64,
        holds: bool,
    },
}

struct Entry {
    goal: usize,
    states: Vec<usize>,
    weight: f64,
}

/// `Σ_{j=t}^T γ^{j−t}·1[φ(s_j) = g]`, 1-based `t`.
fn suffix_return(mdp: &DiscreteGcMdp, states: &[usize], t: usize, g: usize) -> f64 {
    states[t - 1..]
        .iter()
        .enumerate()
        .map(|(k, &s)| mdp.gamma.powi(k as i32) * mdp.indicator(s, g))
        .sum()
}

#[derive(Default)]
struct Cell {
    weight: f64,
    weighted_return: f64,
}

impl Cell {
    fn add(&mut self, w: f64, r: f64) {
        self.weight += w;
        self.weighted_return += w * r;
    }

    fn value(&self) -> f64 {
        self.weighted_return / self.weight
    }
}

fn collect_entries(mdp: &DiscreteGcMdp, behavior: &TabularPolicy, data: Prop2Data) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    match data {
        Prop2Data::Exact => {
            for_each_trajectory(mdp, behavior, |goal, states, _, p| {
                entries.push(Entry {
                    goal,
                    states: states.to_vec(),
                    weight: p,
                })
            })?;
        }
        Prop2Data::Sampled { n_traj, seed } => {
            behavior.check_matches(mdp)?;
            let mut rng = rng_from_seed(seed);
            let draw = |p: &[f64], rng: &mut crate::rng::Rng| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, &x) in p.iter().enumerate() {
                    acc += x;
                    if u < acc {
                        return k;
                    }
                }
                p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
            };
            for _ in 0..n_traj {
                let goal = draw(&mdp.goal_dist, &mut rng);
                let mut s = draw(&mdp.init_dist, &mut rng);
                let mut states = Vec::with_capacity(mdp.horizon);
                for t in 1..=mdp.horizon {
                    states.push(s);
                    let a = draw(behavior.row(t, s, goal), &mut rng);
                    s = draw(mdp.next_dist(s, a), &mut rng);
                }
                entries.push(Entry {
                    goal,
                    states,
                    weight: 1.0,
                });
            }
        }
    }
    Ok(entries)
}

/// Relabeling that accepts a hindsight goal only when its suffix return
/// beats every dataset suffix from the same `(t, s_t)` with that goal.
///
/// Values are suffix-return averages over the data: `V^{π_b}(t, s, g)` is the
/// mean of `R_t` over dataset entries at state `s` at time `t` with goal `g`,
/// and `V^{π_relabel}` is the same mean over the relabeled entries, each of
/// which carries its suffix from `t` under the relabeled goal.
pub fn check_prop2(mdp: &DiscreteGcMdp, behavior: &TabularPolicy, data: Prop2Data) -> Result<Prop2Outcome> {
    if !mdp.is_deterministic() {
        return Ok(Prop2Outcome::Inapplicable("transitions are not deterministic".into()));
    }
    if !mdp.phi_is_surjective() {
        return Ok(Prop2Outcome::Inapplicable("phi does not cover every goal".into()));
    }
    let entries = collect_entries(mdp, behavior, data)?;
    if entries.is_empty() {
        return Ok(Prop2Outcome::Inapplicable("empty dataset".into()));
    }
    let t_max = mdp.horizon;
    // best[(t, s, g)] = max over dataset suffixes; original[(t, s, g)] = mean
    let mut best: HashMap<(usize, usize, usize), f64> = HashMap::new();
    let mut original: HashMap<(usize, usize, usize), Cell> = HashMap::new();
    for e in &entries {
        for t in 1..=t_max {
            let key = (t, e.states[t - 1], e.goal);
            let r = suffix_return(mdp, &e.states, t, e.goal);
            let b = best.entry(key).or_insert(f64::NEG_INFINITY);
            *b = b.max(r);
            original.entry(key).or_default().add(e.weight, r);
        }
    }

    let mut sampler = match data {
        Prop2Data::Sampled { seed, .. } => Some(rng_from_seed(crate::rng::derive_seed(seed, 1))),
        Prop2Data::Exact => None,
    };
    let mut relabeled: HashMap<(usize, usize, usize), Cell> = HashMap::new();
    let (mut accepted, mut rejected) = (0.0, 0.0);
    for e in &entries {
        for t in 1..=t_max {
            let s = e.states[t - 1];
            if e.states[t - 1..].iter().any(|&x| mdp.phi[x] == e.goal) {
                relabeled
                    .entry((t, s, e.goal))
                    .or_default()
                    .add(e.weight, suffix_return(mdp, &e.states, t, e.goal));
                continue;
            }
            let candidates: Vec<usize> = match sampler.as_mut() {
                Some(rng) => vec![rng.random_range(t..=t_max)],
                None => (t..=t_max).collect(),
            };
            let w = e.weight / candidates.len() as f64;
            for i in candidates {
                let g2 = mdp.phi[e.states[i - 1]];
                let r2 = suffix_return(mdp, &e.states, t, g2);
                let bar = best.get(&(t, s, g2)).copied().unwrap_or(f64::NEG_INFINITY);
                if r2 > bar {
                    accepted += w;
                    relabeled.entry((t, s, g2)).or_default().add(w, r2);
                } else {
                    rejected += w;
                    relabeled.entry((t, s, e.goal)).or_default().add(w, 0.0);
                }
            }
        }
    }

    let mut min_slack = f64::INFINITY;
    let (mut cells, mut vacated, mut strict) = (0, 0, 0);
    for (key, cell) in &original {
        match relabeled.get(key) {
            Some(new) if new.weight > 0.0 => {
                let slack = new.value() - cell.value();
                min_slack = min_slack.min(slack);
                cells += 1;
                if slack > CHECK_TOLERANCE {
                    strict += 1;
                }
            }
            _ => vacated += 1,
        }
    }
    Ok(Prop2Outcome::Checked {
        min_slack,
        cells,
        vacated,
        strict_improvements: strict,
        accepted,
        rejected,
        holds: min_slack >= -CHECK_TOLERANCE,
    })
}

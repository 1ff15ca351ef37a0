use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::checks::{
    check_corollary1, check_prop1, check_prop2, check_theorem1, grad_match, Prop1Config, Prop2Data, Prop2Outcome,
    CHECK_TOLERANCE,
};
use super::random::{random_deterministic_mdp, random_mdp, random_policy, InstanceShape};
use super::DiscreteGcMdp;
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Largest accepted gradient mismatch at the behavior policy.
pub const GRAD_MATCH_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Theorem1,
    Corollary1,
    GradMatch,
    Prop1,
    Prop2,
}

impl CheckKind {
    pub const ALL: [CheckKind; 5] = [
        CheckKind::Theorem1,
        CheckKind::Corollary1,
        CheckKind::GradMatch,
        CheckKind::Prop1,
        CheckKind::Prop2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Theorem1 => "theorem1",
            CheckKind::Corollary1 => "corollary1",
            CheckKind::GradMatch => "gradmatch",
            CheckKind::Prop1 => "prop1",
            CheckKind::Prop2 => "prop2",
        }
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CheckKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            invalid(format!(
                "unknown check {s:?}; expected one of theorem1, corollary1, gradmatch, prop1, prop2"
            ))
        })
    }
}

/// One JSON line per checked instance. `holds` is null when the instance
/// does not satisfy the check's assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub instance_seed: u64,
    pub quantities: BTreeMap<String, Value>,
    pub holds: Option<bool>,
}

impl CheckReport {
    pub fn failed(&self) -> bool {
        self.holds == Some(false)
    }
}

fn sizes(mdp: &DiscreteGcMdp) -> BTreeMap<String, Value> {
    BTreeMap::from([
        ("n_states".into(), json!(mdp.n_states)),
        ("n_actions".into(), json!(mdp.n_actions)),
        ("n_goals".into(), json!(mdp.n_goals)),
        ("horizon".into(), json!(mdp.horizon)),
        ("gamma".into(), json!(mdp.gamma)),
    ])
}

/// Runs `trials` random instances of `kind`. Instance `k` is generated from
/// `derive_seed(seed, k)`. For the relabeling check `n_traj` switches from
/// the exact dataset to sampled rollouts.
pub fn run_check(kind: CheckKind, trials: usize, seed: u64, n_traj: Option<usize>) -> Result<Vec<CheckReport>> {
    let shape = InstanceShape::default();
    (0..trials as u64)
        .map(|k| {
            let instance_seed = derive_seed(seed, k);
            run_instance(kind, &shape, instance_seed, n_traj)
        })
        .collect()
}

fn run_instance(
    kind: CheckKind,
    shape: &InstanceShape,
    instance_seed: u64,
    n_traj: Option<usize>,
) -> Result<CheckReport> {
    let mut rng = rng_from_seed(instance_seed);
    let mdp = match kind {
        CheckKind::Prop2 => random_deterministic_mdp(shape, &mut rng)?,
        _ => random_mdp(shape, &mut rng)?,
    };
    let mut q = sizes(&mdp);
    let holds = match kind {
        CheckKind::Theorem1 | CheckKind::Corollary1 => {
            let pi = random_policy(&mdp, &mut rng);
            let behavior = random_policy(&mdp, &mut rng);
            let report = if kind == CheckKind::Theorem1 {
                check_theorem1(&mdp, &pi, &behavior)?
            } else {
                let h: Vec<f64> = (0..mdp.n_states * mdp.n_actions * mdp.n_goals)
                    .map(|_| rng.random_range(1.0..=5.0))
                    .collect();
                check_corollary1(&mdp, &pi, &behavior, &h)?
            };
            q.insert("j_surr".into(), json!(report.j_surr));
            q.insert("t_j_wgcsl".into(), json!(report.t_j_wgcsl));
            q.insert("t_j_gcsl".into(), json!(report.t_j_gcsl));
            Some(report.holds)
        }
        CheckKind::GradMatch => {
            let logits: Vec<f64> = (0..mdp.n_states * mdp.n_goals * mdp.n_actions)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let diff = grad_match(&mdp, &logits)?;
            q.insert("max_relative_difference".into(), json!(diff));
            Some(diff < GRAD_MATCH_TOLERANCE)
        }
        CheckKind::Prop1 => {
            let pi = random_policy(&mdp, &mut rng);
            let (_, slack) = check_prop1(&mdp, &pi, Prop1Config::default())?;
            q.insert("min_slack".into(), json!(slack));
            Some(slack >= -CHECK_TOLERANCE)
        }
        CheckKind::Prop2 => {
            let behavior = random_policy(&mdp, &mut rng);
            let data = match n_traj {
                Some(n) => Prop2Data::Sampled {
                    n_traj: n,
                    seed: derive_seed(instance_seed, 1),
                },
                None => Prop2Data::Exact,
            };
            match check_prop2(&mdp, &behavior, data)? {
                Prop2Outcome::Inapplicable(reason) => {
                    q.insert("inapplicable".into(), json!(reason));
                    None
                }
                Prop2Outcome::Checked {
                    min_slack,
                    cells,
                    vacated,
                    strict_improvements,
                    accepted,
                    rejected,
                    holds,
                } => {
                    q.insert("min_slack".into(), json!(min_slack));
                    q.insert("cells".into(), json!(cells));
                    q.insert("vacated".into(), json!(vacated));
                    q.insert("strict_improvements".into(), json!(strict_improvements));
                    q.insert("accepted".into(), json!(accepted));
                    q.insert("rejected".into(), json!(rejected));
                    Some(holds)
                }
            }
        }
    };
    Ok(CheckReport {
        check: kind.name().into(),
        instance_seed,
        quantities: q,
        holds,
    })
}

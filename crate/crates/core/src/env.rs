//! Goal-conditioned point environments.
//!
//! Both tasks live in the square `[-5, 5]²`. The agent position is the state,
//! the goal space equals the state space, and an action is a displacement
//! clipped to `[-1, 1]²`. PointRooms adds four rooms whose walls run along the
//! axes; each half-axis wall has a door of width 1 in its middle.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::rng_from_seed;

pub type Vec2 = [f64; 2];

/// Distance a blocked move stops short of the wall it hit.
pub const WALL_MARGIN: f64 = 1e-6;

const DOOR_WIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    PointReach,
    PointRooms,
}

impl EnvId {
    pub const ALL: [EnvId; 2] = [EnvId::PointReach, EnvId::PointRooms];

    pub fn name(self) -> &'static str {
        match self {
            EnvId::PointReach => "pointreach",
            EnvId::PointRooms => "pointrooms",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pointreach" => Ok(EnvId::PointReach),
            "pointrooms" => Ok(EnvId::PointRooms),
            other => Err(format!("unknown environment `{other}`")),
        }
    }
}

/// Axis-aligned wall segment of zero thickness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub start: Vec2,
    pub end: Vec2,
}

impl Wall {
    fn vertical(x: f64, y0: f64, y1: f64) -> Self {
        Wall {
            start: [x, y0.min(y1)],
            end: [x, y0.max(y1)],
        }
    }

    fn horizontal(y: f64, x0: f64, x1: f64) -> Self {
        Wall {
            start: [x0.min(x1), y],
            end: [x0.max(x1), y],
        }
    }

    pub fn is_vertical(&self) -> bool {
        self.start[0] == self.end[0]
    }

    /// Euclidean distance from `p` to the closest point of the segment.
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let d = [self.end[0] - self.start[0], self.end[1] - self.start[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let u = if len2 == 0.0 {
            0.0
        } else {
            (((p[0] - self.start[0]) * d[0] + (p[1] - self.start[1]) * d[1]) / len2).clamp(0.0, 1.0)
        };
        let c = [self.start[0] + u * d[0], self.start[1] + u * d[1]];
        ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()
    }

    /// Parameter `u ∈ [0, 1]` at which the motion `p → p + d` meets this
    /// wall, if it does. Motion parallel to the wall never hits it.
    fn hit_parameter(&self, p: Vec2, d: Vec2) -> Option<f64> {
        let (axis, other) = if self.is_vertical() { (0, 1) } else { (1, 0) };
        if d[axis] == 0.0 {
            return None;
        }
        let u = (self.start[axis] - p[axis]) / d[axis];
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let c = p[other] + u * d[other];
        (self.start[other] <= c && c <= self.end[other]).then_some(u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: EnvId,
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub act_dim: usize,
    /// `(low, high)` per dimension.
    pub bounds: [(f64, f64); 2],
    pub threshold: f64,
    pub horizon: usize,
    pub walls: Vec<Wall>,
}

impl EnvSpec {
    pub fn new(env_id: EnvId) -> Self {
        let walls = match env_id {
            EnvId::PointReach => Vec::new(),
            EnvId::PointRooms => four_rooms_walls(5.0),
        };
        EnvSpec {
            env_id,
            obs_dim: 2,
            goal_dim: 2,
            act_dim: 2,
            bounds: [(-5.0, 5.0), (-5.0, 5.0)],
            threshold: 1.0,
            horizon: 50,
            walls,
        }
    }

    pub fn point_reach() -> Self {
        Self::new(EnvId::PointReach)
    }

    pub fn point_rooms() -> Self {
        Self::new(EnvId::PointRooms)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(invalid("threshold must be positive"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        if self.bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(invalid("bounds must be non-degenerate"));
        }
        if self.walls.is_empty() != (self.env_id == EnvId::PointReach) {
            return Err(invalid("walls must be present exactly for PointRooms"));
        }
        if self.obs_dim != 2 || self.goal_dim != 2 || self.act_dim != 2 {
            return Err(invalid("point tasks are two-dimensional"));
        }
        Ok(())
    }

    fn clip_to_bounds(&self, p: Vec2) -> Vec2 {
        [
            p[0].clamp(self.bounds[0].0, self.bounds[0].1),
            p[1].clamp(self.bounds[1].0, self.bounds[1].1),
        ]
    }

    /// True when `p` is within the wall margin of some wall.
    pub fn touches_wall(&self, p: Vec2) -> bool {
        self.walls.iter().any(|w| w.distance_to(p) <= WALL_MARGIN)
    }

    fn first_hit(&self, p: Vec2, d: Vec2) -> Option<(f64, &Wall)> {
        self.walls
            .iter()
            .filter_map(|w| w.hit_parameter(p, d).map(|u| (u, w)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

/// Walls along `x = 0` and `y = 0`, split into four half-axis walls, each
/// with a centered door.
fn four_rooms_walls(half: f64) -> Vec<Wall> {
    let door_lo = half / 2.0 - DOOR_WIDTH / 2.0;
    let door_hi = half / 2.0 + DOOR_WIDTH / 2.0;
    let mut walls = Vec::with_capacity(8);
    for sign in [1.0, -1.0] {
        walls.push(Wall::vertical(0.0, 0.0, sign * door_lo));
        walls.push(Wall::vertical(0.0, sign * door_hi, sign * half));
        walls.push(Wall::horizontal(0.0, 0.0, sign * door_lo));
        walls.push(Wall::horizontal(0.0, sign * door_hi, sign * half));
    }
    walls
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvObservation {
    pub state: Vec2,
    pub desired_goal: Vec2,
    pub achieved_goal: Vec2,
}

fn sample_free_point(spec: &EnvSpec, rng: &mut impl rand::Rng) -> Vec2 {
    loop {
        let p = [
            spec.bounds[0].0 + (spec.bounds[0].1 - spec.bounds[0].0) * rng.random::<f64>(),
            spec.bounds[1].0 + (spec.bounds[1].1 - spec.bounds[1].0) * rng.random::<f64>(),
        ];
        if !spec.touches_wall(p) {
            return p;
        }
    }
}

/// Uniform start state and desired goal; both avoid walls.
pub fn reset(spec: &EnvSpec, seed: u64) -> EnvObservation {
    let mut rng = rng_from_seed(seed);
    let state = sample_free_point(spec, &mut rng);
    let desired_goal = sample_free_point(spec, &mut rng);
    EnvObservation {
        state,
        desired_goal,
        achieved_goal: phi(spec, state),
    }
}

/// Applies a displacement. Actions are clipped to `[-1, 1]`, the target to
/// the bounds, and in PointRooms a move that meets a wall stops just short of
/// the first wall on its path.
pub fn step(spec: &EnvSpec, state: Vec2, action: Vec2) -> Result<Vec2> {
    if action.iter().any(|a| !a.is_finite()) {
        return Err(invalid(format!("non-finite action {action:?}")));
    }
    if state.iter().any(|s| !s.is_finite()) {
        return Err(invalid(format!("non-finite state {state:?}")));
    }
    let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
    let mut target = spec.clip_to_bounds([state[0] + a[0], state[1] + a[1]]);
    if spec.walls.is_empty() {
        return Ok(target);
    }
    // A back-off can graze a door edge the original path missed, so re-check.
    for _ in 0..4 {
        let d = [target[0] - state[0], target[1] - state[1]];
        let Some((u, wall)) = spec.first_hit(state, d) else {
            return Ok(target);
        };
        let mut stop = [state[0] + u * d[0], state[1] + u * d[1]];
        let axis = if wall.is_vertical() { 0 } else { 1 };
        let toward_start = if d[axis] > 0.0 { -1.0 } else { 1.0 };
        stop[axis] = wall.start[axis] + toward_start * WALL_MARGIN;
        // Keep the stop between the start and the wall.
        if (stop[axis] - state[axis]) * d[axis] < 0.0 {
            stop[axis] = state[axis];
        }
        target = stop;
    }
    Ok(state)
}

/// State-to-goal mapping; the identity for both point tasks.
pub fn phi(_spec: &EnvSpec, state: Vec2) -> Vec2 {
    state
}

/// 1 when the Euclidean distance is at most `threshold`, else 0.
pub fn sparse_reward(achieved: &[f64], desired: &[f64], threshold: f64) -> Result<f64> {
    if achieved.len() != desired.len() {
        return Err(invalid(format!(
            "goal dimension mismatch: {} vs {}",
            achieved.len(),
            desired.len()
        )));
    }
    let d2: f64 = achieved.iter().zip(desired).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(reward_from_sq_distance(d2, threshold))
}

#[inline]
pub(crate) fn reward_from_sq_distance(d2: f64, threshold: f64) -> f64 {
    if d2.sqrt() <= threshold {
        1.0
    } else {
        0.0
    }
}

/// Reward for goals stored as `f32`, evaluated in `f64`.
#[inline]
pub fn reward_f32(achieved: &[f32], desired: &[f32], threshold: f64) -> f64 {
    let d2: f64 = achieved
        .iter()
        .zip(desired)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    reward_from_sq_distance(d2, threshold)
}

pub fn distance(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    /// Orientation-based proper/improper segment intersection test, written
    /// independently of the axis-aligned hit computation in `step`.
    fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
        fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
            (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        }
        fn on_segment(a: Vec2, b: Vec2, c: Vec2) -> bool {
            c[0] >= a[0].min(b[0]) && c[0] <= a[0].max(b[0]) && c[1] >= a[1].min(b[1]) && c[1] <= a[1].max(b[1])
        }
        let d1 = orient(q1, q2, p1);
        let d2 = orient(q1, q2, p2);
        let d3 = orient(p1, p2, q1);
        let d4 = orient(p1, p2, q2);
        if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
            return true;
        }
        (d1 == 0.0 && on_segment(q1, q2, p1))
            || (d2 == 0.0 && on_segment(q1, q2, p2))
            || (d3 == 0.0 && on_segment(p1, p2, q1))
            || (d4 == 0.0 && on_segment(p1, p2, q2))
    }

    fn in_bounds(spec: &EnvSpec, p: Vec2) -> bool {
        spec.bounds.iter().zip(p).all(|(&(lo, hi), x)| lo <= x && x <= hi)
    }

    #[test]
    fn specs_are_valid() {
        EnvSpec::point_reach().validate().unwrap();
        let rooms = EnvSpec::point_rooms();
        rooms.validate().unwrap();
        assert_eq!(rooms.walls.len(), 8);
        let mut bad = EnvSpec::point_reach();
        bad.walls = rooms.walls.clone();
        assert!(bad.validate().is_err());
        bad = EnvSpec::point_reach();
        bad.threshold = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn reset_in_range_and_deterministic() {
        let spec = EnvSpec::point_reach();
        let a = reset(&spec, 7);
        let b = reset(&spec, 7);
        assert!(in_bounds(&spec, a.state) && in_bounds(&spec, a.desired_goal));
        assert_eq!(a.state.map(f64::to_bits), b.state.map(f64::to_bits));
        assert_eq!(a.desired_goal.map(f64::to_bits), b.desired_goal.map(f64::to_bits));
        assert_eq!(a.achieved_goal, a.state);
        assert_ne!(reset(&spec, 8).state, a.state);
    }

    #[test]
    fn rooms_reset_avoids_walls() {
        let spec = EnvSpec::point_rooms();
        for seed in 0..5000 {
            let obs = reset(&spec, seed);
            for p in [obs.state, obs.desired_goal] {
                // a degenerate segment is a point; test membership with it
                assert!(spec.walls.iter().all(|w| !segments_intersect(p, p, w.start, w.end)));
                assert!(in_bounds(&spec, p));
            }
        }
    }

    #[test]
    fn displacement_and_clipping() {
        let spec = EnvSpec::point_reach();
        assert_eq!(step(&spec, [0.0, 0.0], [1.0, 1.0]).unwrap(), [1.0, 1.0]);
        assert_eq!(step(&spec, [4.8, 0.0], [1.0, 0.0]).unwrap(), [5.0, 0.0]);
        assert_eq!(step(&spec, [0.0, 0.0], [3.0, -7.0]).unwrap(), [1.0, -1.0]);
        assert!(step(&spec, [0.0, 0.0], [f64::NAN, 0.0]).is_err());
        assert!(step(&spec, [0.0, 0.0], [0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn rooms_wall_blocks_motion() {
        let spec = EnvSpec::point_rooms();
        // crosses x = 0 at y = 1, which is solid wall
        let start = [-0.5, 1.0];
        let end = step(&spec, start, [1.0, 0.0]).unwrap();
        assert!(end[0] < 0.0, "{end:?}");
        assert!((end[0] + WALL_MARGIN).abs() < 1e-12);
        for w in &spec.walls {
            assert!(!segments_intersect(start, end, w.start, w.end));
        }
        // through the door at y = 2.5 the move is free
        assert_eq!(step(&spec, [-0.5, 2.5], [1.0, 0.0]).unwrap(), [0.5, 2.5]);
        // diagonal into the center junction
        let end = step(&spec, [-0.5, -0.5], [1.0, 1.0]).unwrap();
        assert!(end[0] < 0.0 && end[1] < 0.0, "{end:?}");
    }

    #[test]
    fn phi_is_identity() {
        let spec = EnvSpec::point_reach();
        assert_eq!(phi(&spec, [1.5, -2.0]), [1.5, -2.0]);
        assert_eq!(phi(&spec, [0.0, 0.0]), [0.0, 0.0]);
    }

    #[test]
    fn reward_cases() {
        assert_eq!(sparse_reward(&[0.5, 0.0], &[0.0, 0.0], 1.0).unwrap(), 1.0);
        assert_eq!(sparse_reward(&[2.0, 0.0], &[0.0, 0.0], 1.0).unwrap(), 0.0);
        assert_eq!(sparse_reward(&[1.0, 0.0], &[0.0, 0.0], 1.0).unwrap(), 1.0);
        assert_eq!(sparse_reward(&[0.0, 1.0], &[0.0, 0.0], 1.0).unwrap(), 1.0);
        assert!(sparse_reward(&[0.0, 1.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn many_steps_stay_in_bounds_and_never_cross_walls() {
        let mut rng = rng_from_seed(11);
        for spec in [EnvSpec::point_reach(), EnvSpec::point_rooms()] {
            for _ in 0..100_000 {
                let s = sample_free_point(&spec, &mut rng);
                let a = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let next = step(&spec, s, a).unwrap();
                assert!(in_bounds(&spec, next));
                assert_eq!(next.map(f64::to_bits), step(&spec, s, a).unwrap().map(f64::to_bits));
                for w in &spec.walls {
                    assert!(
                        !segments_intersect(s, next, w.start, w.end),
                        "{s:?} -> {next:?} crosses {w:?}"
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn reward_symmetric_and_translation_invariant(
            ax in -5.0f64..5.0, ay in -5.0f64..5.0,
            bx in -5.0f64..5.0, by in -5.0f64..5.0,
            tx in -3.0f64..3.0, ty in -3.0f64..3.0,
        ) {
            let r = sparse_reward(&[ax, ay], &[bx, by], 1.0).unwrap();
            prop_assert_eq!(r, sparse_reward(&[bx, by], &[ax, ay], 1.0).unwrap());
            let shifted = sparse_reward(&[ax + tx, ay + ty], &[bx + tx, by + ty], 1.0).unwrap();
            // translation can move a boundary case by one ulp
            let d = distance([ax, ay], [bx, by]);
            if (d - 1.0).abs() > 1e-9 {
                prop_assert_eq!(r, shifted);
            }
        }
    }
}

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Components of the compound relabeling weight
/// `w = γ_drw^δ · clip(exp A, 0, M) · (A > Â ? 1 : ε_min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub drw_gamma: f64,
    pub clip_bound: f64,
    pub eps_min: f64,
    pub baw_percentile_final: f64,
    /// Percentile points added per training step.
    pub baw_increment: f64,
    pub queue_capacity: usize,
    pub use_drw: bool,
    pub use_geaw: bool,
    pub use_baw: bool,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            drw_gamma: 0.98,
            clip_bound: 10.0,
            eps_min: 0.05,
            baw_percentile_final: 80.0,
            baw_increment: 0.15,
            queue_capacity: 50_000,
            use_drw: true,
            use_geaw: true,
            use_baw: true,
        }
    }
}

impl WeightConfig {
    pub fn all_off() -> Self {
        WeightConfig {
            use_drw: false,
            use_geaw: false,
            use_baw: false,
            ..Default::default()
        }
    }

    /// Advantage-based components need a critic.
    pub fn needs_critic(&self) -> bool {
        self.use_geaw || self.use_baw
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.drw_gamma > 0.0 && self.drw_gamma <= 1.0) {
            return Err(config(format!("drw_gamma {} outside (0, 1]", self.drw_gamma)));
        }
        if !(self.clip_bound > 0.0) {
            return Err(config(format!("clip_bound {} must be positive", self.clip_bound)));
        }
        if !(self.eps_min > 0.0 && self.eps_min <= 1.0) {
            return Err(config(format!("eps_min {} outside (0, 1]", self.eps_min)));
        }
        if !(0.0..=100.0).contains(&self.baw_percentile_final) {
            return Err(config(format!(
                "baw_percentile_final {} outside [0, 100]",
                self.baw_percentile_final
            )));
        }
        if !(self.baw_increment >= 0.0 && self.baw_increment.is_finite()) {
            return Err(config(format!(
                "baw_increment {} must be nonnegative",
                self.baw_increment
            )));
        }
        if self.queue_capacity == 0 {
            return Err(config("queue_capacity must be positive"));
        }
        Ok(())
    }

    /// Percentile `N` used for the threshold after `train_step` steps.
    pub fn baw_percentile(&self, train_step: u64) -> f64 {
        (self.baw_increment * train_step as f64).min(self.baw_percentile_final)
    }
}

/// Product of the enabled weight components.
pub fn compute_weight(delta: u32, advantage: f64, threshold: f64, cfg: &WeightConfig) -> f64 {
    let mut w = 1.0;
    if cfg.use_drw {
        w *= cfg.drw_gamma.powi(delta as i32);
    }
    if cfg.use_geaw {
        w *= advantage.exp().clamp(0.0, cfg.clip_bound);
    }
    if cfg.use_baw && advantage <= threshold {
        w *= cfg.eps_min;
    }
    w
}

/// Exponential advantage weight of goal-conditioned MARWIL,
/// `min(exp(A / β), M)`.
pub fn marwil_weight(advantage: f64, beta: f64, clip_bound: f64) -> f64 {
    (advantage / beta).exp().min(clip_bound)
}

/// Bounded FIFO of recent advantages; the oldest value is evicted first.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageQueue {
    capacity: usize,
    values: VecDeque<f64>,
}

impl AdvantageQueue {
    pub fn new(capacity: usize) -> Self {
        AdvantageQueue {
            capacity,
            values: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn push(&mut self, value: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(value);
    }

    pub fn extend(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values {
            self.push(v);
        }
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    /// Linearly interpolated `pct`-th percentile; `-∞` when empty.
    pub fn percentile(&self, pct: f64) -> f64 {
        let mut buf: Vec<f64> = self.values.iter().copied().collect();
        percentile_in_place(&mut buf, pct)
    }
}

/// Linear-interpolation percentile (the `(n − 1)·p` rank rule). Reorders
/// `values`.
pub fn percentile_in_place(values: &mut [f64], pct: f64) -> f64 {
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let rank = (pct.clamp(0.0, 100.0) / 100.0) * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let (_, &mut lo_value, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return lo_value;
    }
    let hi_value = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_value + frac * (hi_value - lo_value)
}

/// Threshold `Â` for the best-advantage weight at `train_step`.
pub fn baw_threshold(queue: &AdvantageQueue, train_step: u64, cfg: &WeightConfig) -> f64 {
    queue.percentile(cfg.baw_percentile(train_step))
}

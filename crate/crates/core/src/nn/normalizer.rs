use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const STD_FLOOR: f64 = 1e-2;
pub const NORM_CLIP: f64 = 5.0;

/// Running per-dimension mean and standard deviation, accumulated in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub dim: usize,
    pub count: u64,
    pub sum: Vec<f64>,
    pub sumsq: Vec<f64>,
}

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Normalizer {
            dim,
            count: 0,
            sum: vec![0.0; dim],
            sumsq: vec![0.0; dim],
        }
    }

    /// Adds every `dim`-sized row of `rows`.
    pub fn update(&mut self, rows: &[f32]) -> Result<()> {
        if self.dim == 0 || !rows.len().is_multiple_of(self.dim) {
            return Err(invalid(format!(
                "normalizer of dim {} got {} values",
                self.dim,
                rows.len()
            )));
        }
        for row in rows.chunks_exact(self.dim) {
            for ((s, q), &x) in self.sum.iter_mut().zip(&mut self.sumsq).zip(row) {
                let x = x as f64;
                *s += x;
                *q += x * x;
            }
        }
        self.count += (rows.len() / self.dim) as u64;
        Ok(())
    }

    pub fn mean(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim];
        }
        self.sum.iter().map(|s| s / self.count as f64).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![1.0; self.dim];
        }
        let n = self.count as f64;
        self.sum
            .iter()
            .zip(&self.sumsq)
            .map(|(s, q)| {
                let mean = s / n;
                (q / n - mean * mean).max(0.0).sqrt().max(STD_FLOOR)
            })
            .collect()
    }

    /// `clip((x − mean) / std, ±5)` for each row of `rows`.
    pub fn normalize(&self, rows: &[f32]) -> Result<Vec<f32>> {
        let mut out = rows.to_vec();
        self.normalize_in_place(&mut out)?;
        Ok(out)
    }

    pub fn normalize_in_place(&self, rows: &mut [f32]) -> Result<()> {
        if self.dim == 0 || !rows.len().is_multiple_of(self.dim) {
            return Err(invalid(format!(
                "normalizer of dim {} got {} values",
                self.dim,
                rows.len()
            )));
        }
        let mean = self.mean();
        let std = self.std();
        for row in rows.chunks_exact_mut(self.dim) {
            for ((x, m), s) in row.iter_mut().zip(&mean).zip(&std) {
                *x = ((*x as f64 - m) / s).clamp(-NORM_CLIP, NORM_CLIP) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn fresh_normalizer_is_clipped_identity() {
        let n = Normalizer::new(3);
        assert_eq!(n.mean(), vec![0.0; 3]);
        assert_eq!(n.std(), vec![1.0; 3]);
        assert_eq!(n.normalize(&[0.5, -2.0, 9.0]).unwrap(), vec![0.5, -2.0, 5.0]);
    }

    #[test]
    fn constant_input_hits_std_floor() {
        let mut n = Normalizer::new(2);
        n.update(&[3.0, -1.0].repeat(100)).unwrap();
        assert_eq!(n.mean(), vec![3.0, -1.0]);
        assert_eq!(n.std(), vec![STD_FLOOR; 2]);
        assert_eq!(n.normalize(&[3.0, -1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(n.normalize(&[4.0, -2.0]).unwrap(), vec![5.0, -5.0]);
    }

    #[test]
    fn standard_normal_statistics() {
        let mut rng = rng_from_seed(11);
        let xs: Vec<f32> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut n = Normalizer::new(1);
        n.update(&xs).unwrap();
        assert!(n.mean()[0].abs() < 0.05);
        assert!((n.std()[0] - 1.0).abs() < 0.05);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut n = Normalizer::new(2);
        assert!(n.update(&[1.0; 3]).is_err());
        assert!(n.normalize(&[1.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn update_order_does_not_matter(xs in proptest::collection::vec(-100.0f32..100.0, 2..60)) {
            let rows = &xs[..xs.len() / 2 * 2];
            let mut a = Normalizer::new(2);
            a.update(rows).unwrap();
            let mut b = Normalizer::new(2);
            let mut rev: Vec<&[f32]> = rows.chunks(2).collect();
            rev.reverse();
            for r in rev {
                b.update(r).unwrap();
            }
            prop_assert_eq!(a.count, b.count);
            for (x, y) in a.mean().iter().zip(b.mean()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            for (x, y) in a.std().iter().zip(b.std()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}

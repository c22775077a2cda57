//! Empirical and Bayesian-bootstrap marginals.

use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::math::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub enum EmpiricalMode {
    Fixed,
    /// Dirichlet weights on the sorted values.
    Bootstrap(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMarginal {
    sorted: Vec<f64>,
    mode: EmpiricalMode,
}

impl EmpiricalMarginal {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empirical marginal needs at least one value".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value {bad}")));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            sorted,
            mode: EmpiricalMode::Fixed,
        })
    }

    /// The same support with explicit weights, aligned with `sorted_values`.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.sorted.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} values",
                weights.len(),
                self.sorted.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput("weights must be nonnegative".into()));
        }
        Ok(Self {
            sorted: self.sorted.clone(),
            mode: EmpiricalMode::Bootstrap(weights),
        })
    }

    /// A Bayesian-bootstrap realisation of this marginal.
    pub fn bootstrap(&self, seed: u64) -> Self {
        Self {
            sorted: self.sorted.clone(),
            mode: EmpiricalMode::Bootstrap(draw_bootstrap_weights(self.sorted.len(), seed)),
        }
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn mode(&self) -> &EmpiricalMode {
        &self.mode
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fixed: `y_(⌈n u⌉)`. Bootstrap: the first sorted value whose
    /// cumulative weight reaches `u`.
    pub fn inverse(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u <= 1.0) {
            return Err(Error::Domain { value: u, domain: "(0, 1]" });
        }
        let n = self.sorted.len();
        let idx = match &self.mode {
            EmpiricalMode::Fixed => ((n as f64 * u).ceil() as usize).clamp(1, n) - 1,
            EmpiricalMode::Bootstrap(w) => {
                let mut acc = 0.0;
                let mut idx = n - 1;
                for (i, wi) in w.iter().enumerate() {
                    acc += wi;
                    if acc >= u {
                        idx = i;
                        break;
                    }
                }
                idx
            }
        };
        Ok(self.sorted[idx])
    }

    /// Right-continuous CDF, `#{y_i ≤ y} / n` in fixed mode.
    pub fn cdf(&self, y: f64) -> f64 {
        let k = self.sorted.partition_point(|v| *v <= y);
        match &self.mode {
            EmpiricalMode::Fixed => k as f64 / self.sorted.len() as f64,
            EmpiricalMode::Bootstrap(w) => w[..k].iter().sum::<f64>().min(1.0),
        }
    }
}

/// Dirichlet(1, ..., 1) weights as normalized standard exponentials.
pub fn draw_bootstrap_weights(n: usize, seed: u64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut rng = seeded_rng(seed);
    let mut w: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Fixed-mode inverse of `values` at `u`.
pub fn ecdf_inverse(marg: &EmpiricalMarginal, u: f64) -> Result<f64> {
    marg.inverse(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_inverse_uses_ceiling_index() {
        let m = EmpiricalMarginal::new(&[4.0, 2.0, 3.0, 1.0]).unwrap();
        assert_eq!(m.inverse(0.5).unwrap(), 2.0);
        assert_eq!(m.inverse(1.0).unwrap(), 4.0);
        assert_eq!(m.inverse(0.51).unwrap(), 3.0);
        assert!(matches!(m.inverse(0.0), Err(Error::Domain { .. })));
        assert!(m.inverse(1.0 + 1e-12).is_err());
    }

    #[test]
    fn degenerate_weights_give_a_point_mass() {
        let m = EmpiricalMarginal::new(&[1.0, 2.0, 3.0]).unwrap();
        let b = m.with_weights(vec![1.0, 0.0, 0.0]).unwrap();
        for u in [1e-9, 0.3, 0.99, 1.0] {
            assert_eq!(b.inverse(u).unwrap(), 1.0);
        }
    }

    #[test]
    fn single_weight_is_one_and_weights_are_positive() {
        assert_eq!(draw_bootstrap_weights(1, 9), vec![1.0]);
        let w = draw_bootstrap_weights(50, 2);
        assert!(w.iter().all(|v| *v > 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn midpoint_grid_covers_each_value() {
        let values: Vec<f64> = (0..17).map(|i| i as f64 * 1.5).collect();
        let m = EmpiricalMarginal::new(&values).unwrap();
        let n = values.len();
        let hits: Vec<f64> = (1..=n).map(|i| m.inverse((i as f64 - 0.5) / n as f64).unwrap()).collect();
        assert_eq!(hits, values);
    }
}

//! Recombining product lattice for `d`-dimensional Brownian motion.
//!
//! A node at layer `m` is a tuple `(j_1, ..., j_d)` with `|j_r| <= m` and
//! `j_r = m (mod 2)`; its state is `w = j * sqrt(dt)`. Each coordinate moves
//! by `+-sqrt(dt)` independently with probability 1/2, so every node has
//! `2^d` equally likely children. Coordinates are stored through the digit
//! `i_r = (j_r + m) / 2` in `0..=m`, and the node index is the mixed-radix
//! number `sum_r i_r (m+1)^r`.

use std::borrow::Cow;

use rayon::prelude::*;

use crate::engine::{Engine, EngineKind};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Lattice {
    d: usize,
    steps: usize,
    horizon: f64,
    sqrt_dt: f64,
    grain: usize,
}

impl Lattice {
    /// Builds a lattice, refusing when the final layer would exceed
    /// `node_budget` nodes.
    pub fn build(d: usize, horizon: f64, steps: usize, node_budget: usize) -> Result<Self> {
        if d == 0 || steps == 0 {
            return Err(Error::invalid("lattice needs d >= 1 and M >= 1"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid("lattice horizon must be positive"));
        }
        let last = (steps as u128 + 1).checked_pow(d as u32);
        if last.is_none_or(|nodes| nodes > node_budget as u128) {
            return Err(Error::Resource(format!(
                "lattice with d={d}, M={steps} needs (M+1)^d nodes on the last layer; budget is {node_budget}"
            )));
        }
        Ok(Lattice { d, steps, horizon, sqrt_dt: (horizon / steps as f64).sqrt(), grain: 256 })
    }

    /// Minimum number of parent nodes handled per parallel task.
    pub fn with_grain(mut self, grain: usize) -> Self {
        self.grain = grain.max(1);
        self
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    /// Per-coordinate digits of node `idx` at layer `m`.
    pub fn digits(&self, m: usize, mut idx: usize, out: &mut [usize]) {
        let radix = m + 1;
        for digit in out.iter_mut().take(self.d) {
            *digit = idx % radix;
            idx /= radix;
        }
    }

    /// Index at layer `m + 1` of the child reached by `moves`; bit `r` set
    /// means coordinate `r` moves up.
    pub fn child(&self, m: usize, digits: &[usize], moves: usize) -> usize {
        let radix = m + 2;
        let mut idx = 0;
        for r in (0..self.d).rev() {
            idx = idx * radix + digits[r] + ((moves >> r) & 1);
        }
        idx
    }

    /// Layer-`m` indices of the `2^d` children of `idx`, in `moves` order.
    pub fn children(&self, m: usize, idx: usize) -> Vec<usize> {
        let mut digits = vec![0; self.d];
        self.digits(m, idx, &mut digits);
        (0..1usize << self.d).map(|mv| self.child(m, &digits, mv)).collect()
    }

    /// Probability of each node at layer `m` (product of binomial weights).
    pub fn weights(&self, m: usize) -> Vec<f64> {
        let marginal = binomial_half_pmf(m);
        let mut digits = vec![0; self.d];
        (0..self.layer_len(m))
            .map(|idx| {
                self.digits(m, idx, &mut digits);
                digits.iter().map(|&i| marginal[i]).product()
            })
            .collect()
    }

    fn check_len(&self, m: usize, layer: usize, field: &[f64], width: usize) -> Result<()> {
        if m >= self.steps && layer == m + 1 {
            return Err(Error::invalid(format!("no layer after {m}")));
        }
        let expected = self.layer_len(layer) * width;
        if width == 0 || field.len() != expected {
            return Err(Error::invalid(format!(
                "field on layer {layer} has {} entries, expected {expected}",
                field.len()
            )));
        }
        Ok(())
    }
}

/// `P(Bin(m, 1/2) = i)` for `i = 0..=m`, computed in log space.
pub fn binomial_half_pmf(m: usize) -> Vec<f64> {
    let ln2 = std::f64::consts::LN_2;
    let mut out = Vec::with_capacity(m + 1);
    let mut ln_choose = 0.0;
    for i in 0..=m {
        out.push((ln_choose - m as f64 * ln2).exp());
        ln_choose += ((m - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    out
}

impl Engine for Lattice {
    fn kind(&self) -> EngineKind {
        EngineKind::Lattice
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn layer_len(&self, m: usize) -> usize {
        (m + 1).pow(self.d as u32)
    }

    fn states(&self, m: usize) -> Cow<'_, [f64]> {
        let len = self.layer_len(m);
        let mut out = vec![0.0; len * self.d];
        let mut digits = vec![0; self.d];
        for idx in 0..len {
            self.digits(m, idx, &mut digits);
            for r in 0..self.d {
                out[idx * self.d + r] = (2.0 * digits[r] as f64 - m as f64) * self.sqrt_dt;
            }
        }
        Cow::Owned(out)
    }

    fn cond_exp(&self, m: usize, next: &[f64], width: usize) -> Result<Vec<f64>> {
        self.check_len(m, m + 1, next, width)?;
        let branches = 1usize << self.d;
        let scale = 1.0 / branches as f64;
        let mut out = vec![0.0; self.layer_len(m) * width];
        out.par_chunks_mut(width).with_min_len(self.grain).enumerate().for_each(|(idx, parent)| {
            let mut digits = vec![0; self.d];
            self.digits(m, idx, &mut digits);
            for mv in 0..branches {
                let c = self.child(m, &digits, mv);
                for (p, v) in parent.iter_mut().zip(&next[c * width..(c + 1) * width]) {
                    *p += v;
                }
            }
            parent.iter_mut().for_each(|p| *p *= scale);
        });
        Ok(out)
    }

    fn cond_z(&self, m: usize, next: &[f64], width: usize) -> Result<Vec<f64>> {
        self.check_len(m, m + 1, next, width)?;
        let d = self.d;
        let branches = 1usize << d;
        // mean over children of value * (+-sqrt(dt)), divided by dt
        let scale = 1.0 / (branches as f64 * self.sqrt_dt);
        let mut out = vec![0.0; self.layer_len(m) * width * d];
        out.par_chunks_mut(width * d).with_min_len(self.grain).enumerate().for_each(|(idx, z)| {
            let mut digits = vec![0; d];
            self.digits(m, idx, &mut digits);
            for mv in 0..branches {
                let c = self.child(m, &digits, mv);
                let vals = &next[c * width..(c + 1) * width];
                for (i, v) in vals.iter().enumerate() {
                    for r in 0..d {
                        let sign = if (mv >> r) & 1 == 1 { 1.0 } else { -1.0 };
                        z[i * d + r] += sign * v;
                    }
                }
            }
            z.iter_mut().for_each(|v| *v *= scale);
        });
        Ok(out)
    }

    fn mean(&self, m: usize, field: &[f64], width: usize) -> Result<Vec<f64>> {
        self.check_len(m, m, field, width)?;
        let weights = self.weights(m);
        let mut out = vec![0.0; width];
        for (w, row) in weights.iter().zip(field.chunks(width)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(d: usize, m: usize) -> Lattice {
        Lattice::build(d, 1.0, m, 1_000_000).unwrap()
    }

    #[test]
    fn layer_sizes() {
        let l = lat(1, 2);
        assert_eq!((0..=2).map(|m| l.layer_len(m)).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(lat(2, 1).layer_len(1), 4);
    }

    #[test]
    fn node_budget_guard() {
        let err = Lattice::build(1, 1.0, 1_000_000, 1_000_000).unwrap_err();
        assert!(matches!(err, Error::Resource(_)));
    }

    #[test]
    fn parent_is_average_of_children() {
        let l = lat(1, 4);
        assert_eq!(l.cond_exp(0, &[2.0, 4.0], 1).unwrap(), vec![3.0]);
    }

    #[test]
    fn constants_are_fixed() {
        let l = lat(2, 5);
        let next = vec![7.0; l.layer_len(4)];
        assert!(l.cond_exp(3, &next, 1).unwrap().iter().all(|&v| v == 7.0));
        assert!(l.cond_z(3, &next, 1).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn state_is_martingale() {
        let l = lat(2, 6);
        let next = l.states(4).into_owned();
        let parent = l.cond_exp(3, &next, 2).unwrap();
        let own = l.states(3);
        for (a, b) in parent.iter().zip(own.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn z_of_state_is_identity_1d() {
        let l = lat(1, 8);
        let next = l.states(5).into_owned();
        let z = l.cond_z(4, &next, 1).unwrap();
        assert!(z.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn z_of_first_coordinate_2d() {
        let l = lat(2, 8);
        let next = l.states(5).into_owned();
        let first: Vec<f64> = next.chunks(2).map(|w| w[0]).collect();
        let z = l.cond_z(4, &first, 1).unwrap();
        for zz in z.chunks(2) {
            assert!((zz[0] - 1.0).abs() < 1e-12 && zz[1].abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let l = lat(1, 3);
        assert!(matches!(l.cond_exp(1, &[1.0, 2.0], 1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn weights_sum_to_one() {
        let l = lat(2, 30);
        let s: f64 = l.weights(30).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let big: f64 = binomial_half_pmf(5000).iter().sum();
        assert!((big - 1.0).abs() < 1e-10);
    }
}

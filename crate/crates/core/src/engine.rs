//! The conditional-expectation contract shared by the lattice and Monte
//! Carlo backends.
//!
//! Fields are flat `Vec<f64>` laid out node-major: entry `node * width + c`
//! holds component `c` at `node`. `cond_z` returns `width * d` entries per
//! node, row-major in `(component, coordinate)`.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Lattice,
    Mc,
}

pub trait Engine: Sync {
    fn kind(&self) -> EngineKind;

    /// Brownian dimension `d`.
    fn dim(&self) -> usize;

    /// Number of time steps `M`.
    fn steps(&self) -> usize;

    fn horizon(&self) -> f64;

    fn dt(&self) -> f64 {
        self.horizon() / self.steps() as f64
    }

    fn time(&self, m: usize) -> f64 {
        m as f64 * self.dt()
    }

    /// Number of nodes (or paths) at layer `m`.
    fn layer_len(&self, m: usize) -> usize;

    /// Brownian states of layer `m`, `layer_len(m) x d` row-major.
    fn states(&self, m: usize) -> Cow<'_, [f64]>;

    /// `E_m[next]` for a `width`-component field living on layer `m + 1`.
    fn cond_exp(&self, m: usize, next: &[f64], width: usize) -> Result<Vec<f64>>;

    /// `E_m[next * dW^T] / dt` for a field on layer `m + 1`.
    fn cond_z(&self, m: usize, next: &[f64], width: usize) -> Result<Vec<f64>>;

    /// `(cond_exp, cond_z)` in one call, for engines that can share work.
    fn cond_exp_z(&self, m: usize, next: &[f64], width: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.cond_exp(m, next, width)?, self.cond_z(m, next, width)?))
    }

    /// Unconditional expectation (at time 0) of a layer-`m` field.
    fn mean(&self, m: usize, field: &[f64], width: usize) -> Result<Vec<f64>>;
}

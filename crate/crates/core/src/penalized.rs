//! Backward induction for the penalized system and for the projected
//! (`k = infinity`) scheme.
//!
//! On each layer the scheme reads
//!
//! ```text
//! a   = E_m[Y_{m+1}]
//! Z_m = E_m[Y_{m+1} dW^T] / dt
//! Y_m = a + dt f(t_m, Y_m, Z_m) + dt k (Y_m - S_m)^-
//! ```
//!
//! The penalty is solved in closed form for fixed driver value, and the
//! driver is iterated by Picard with `Z_m` frozen. `dK_m = dt k (Y_m - S_m)^-`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::model::{GeneratorSpec, PicardStart, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "snake_case")]
pub enum SolutionTag {
    Penalized(f64),
    Direct,
    /// Extracted limit of a penalty run, carrying the last level used.
    Limit(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PicardStats {
    pub max_iter: usize,
    pub mean_iter: f64,
}

/// Per-layer arrays of one backward solve. `y[m]` has `n` entries per node,
/// `z[m]` has `n * d`, `dk[m]` has `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSolution {
    pub tag: SolutionTag,
    pub n: usize,
    pub d: usize,
    pub dt: f64,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub dk: Vec<Vec<f64>>,
    pub picard: PicardStats,
    /// Number of node values that hit the clamp.
    pub clamp_warnings: usize,
}

impl DiscreteSolution {
    pub fn steps(&self) -> usize {
        self.dk.len()
    }

    /// `Y_0` per component (layer 0 has a single state on every engine).
    pub fn y0(&self) -> Vec<f64> {
        let nodes = self.y[0].len() / self.n;
        let mut out = vec![0.0; self.n];
        for row in self.y[0].chunks(self.n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= nodes as f64);
        out
    }

    /// `max |Y|` over all layers and nodes.
    pub fn sup_norm(&self) -> f64 {
        self.y.iter().flatten().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `max |Y_self - Y_other|` over all layers and nodes.
    pub fn sup_distance(&self, other: &DiscreteSolution) -> f64 {
        self.y.iter().flatten().zip(other.y.iter().flatten()).fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// Unique solution of `y = a + dt k (y - s)^-`.
#[inline]
pub fn implicit_penalty_step(a: f64, s: f64, k: f64, dt: f64) -> f64 {
    if a >= s {
        a
    } else {
        let kdt = k * dt;
        (a + kdt * s) / (1.0 + kdt)
    }
}

/// How the constraint `Y >= S` enters a layer update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reflection {
    Penalty(f64),
    Projection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardOutcome {
    pub y: Vec<f64>,
    /// `a + dt f(t, y_prev, z)` from the final sweep.
    pub level: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardSettings {
    fn default() -> Self {
        PicardSettings { tol: 1e-12, max_iter: 50 }
    }
}

/// Fixed point of `y^i = implicit_penalty_step(a^i + dt f^i(t, y, z^i), s^i, k, dt)`
/// started from `y = a`.
#[allow(clippy::too_many_arguments)]
pub fn picard_step(
    gen: &GeneratorSpec,
    t: f64,
    a: &[f64],
    z: &[f64],
    s: &[f64],
    k: f64,
    dt: f64,
    settings: PicardSettings,
) -> Result<PicardOutcome> {
    picard_from(gen, t, a, z, s, Reflection::Penalty(k), dt, settings, a)
}

#[allow(clippy::too_many_arguments)]
pub fn picard_from(
    gen: &GeneratorSpec,
    t: f64,
    a: &[f64],
    z: &[f64],
    s: &[f64],
    reflection: Reflection,
    dt: f64,
    settings: PicardSettings,
    start: &[f64],
) -> Result<PicardOutcome> {
    let n = a.len();
    let mut y = start.to_vec();
    let mut level = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let iterations = picard_in_place(gen, t, a, z, s, reflection, dt, settings, &mut y, &mut level, &mut scratch)?;
    Ok(PicardOutcome { y, level, iterations })
}

/// Allocation-free core of [`picard_from`]: `y` holds the start on entry and
/// the fixed point on return; `scratch` needs `a.len()` entries.
#[allow(clippy::too_many_arguments)]
fn picard_in_place(
    gen: &GeneratorSpec,
    t: f64,
    a: &[f64],
    z: &[f64],
    s: &[f64],
    reflection: Reflection,
    dt: f64,
    settings: PicardSettings,
    y: &mut [f64],
    level: &mut [f64],
    scratch: &mut [f64],
) -> Result<usize> {
    let n = a.len();
    let d = z.len().checked_div(n).unwrap_or(0);
    let mut change = f64::INFINITY;
    for it in 1..=settings.max_iter {
        for i in 0..n {
            let lvl = a[i] + dt * gen.eval(i, t, y, &z[i * d..(i + 1) * d]);
            level[i] = lvl;
            scratch[i] = match reflection {
                Reflection::Penalty(k) => implicit_penalty_step(lvl, s[i], k, dt),
                Reflection::Projection => lvl.max(s[i]),
            };
        }
        change = y.iter().zip(scratch.iter()).fold(0.0, |acc, (p, q)| acc.max((p - q).abs()));
        y.copy_from_slice(scratch);
        if !change.is_finite() {
            return Err(Error::NonConvergence { residual: change, iterations: it });
        }
        if change <= settings.tol {
            return Ok(it);
        }
    }
    Err(Error::NonConvergence { residual: change, iterations: settings.max_iter })
}

/// Barrier values `h^i(t_m, w)` on layer `m`.
pub fn barrier_layer(scenario: &Scenario, engine: &dyn Engine, m: usize) -> Vec<f64> {
    let (n, d) = (scenario.n, engine.dim());
    let t = engine.time(m);
    let states = engine.states(m);
    let mut out = Vec::with_capacity(engine.layer_len(m) * n);
    for w in states.chunks(d) {
        for i in 0..n {
            out.push(scenario.barrier.eval(i, t, w));
        }
    }
    out
}

/// Terminal values `g^i(w)` on the last layer.
pub fn terminal_layer(scenario: &Scenario, engine: &dyn Engine) -> Vec<f64> {
    let (n, d) = (scenario.n, engine.dim());
    let states = engine.states(engine.steps());
    let mut out = Vec::with_capacity(engine.layer_len(engine.steps()) * n);
    for w in states.chunks(d) {
        for i in 0..n {
            out.push(scenario.terminal.eval(i, w));
        }
    }
    out
}

pub(crate) fn check_engine(scenario: &Scenario, engine: &dyn Engine) -> Result<()> {
    if engine.dim() != scenario.d
        || engine.steps() != scenario.steps
        || (engine.horizon() - scenario.horizon).abs() > 1e-12 * scenario.horizon
    {
        return Err(Error::invalid(format!(
            "engine (d={}, M={}, T={}) does not match scenario (d={}, M={}, T={})",
            engine.dim(),
            engine.steps(),
            engine.horizon(),
            scenario.d,
            scenario.steps,
            scenario.horizon
        )));
    }
    Ok(())
}

fn solve(scenario: &Scenario, engine: &dyn Engine, reflection: Reflection) -> Result<DiscreteSolution> {
    scenario.ensure_valid()?;
    check_engine(scenario, engine)?;
    if let Reflection::Penalty(k) = reflection {
        if !(k.is_finite() && k >= 0.0) {
            return Err(Error::invalid(format!("penalty level must be finite and nonnegative, got {k}")));
        }
    }
    let cfg = &scenario.engine_config;
    let (n, d, steps) = (scenario.n, scenario.d, scenario.steps);
    let dt = engine.dt();
    let clamp = scenario.clamp_level();
    let settings = PicardSettings { tol: cfg.picard_tol, max_iter: cfg.picard_max_iter };

    let mut y = vec![Vec::new(); steps + 1];
    let mut z = vec![Vec::new(); steps];
    let mut dk = vec![Vec::new(); steps];
    y[steps] = terminal_layer(scenario, engine);

    let (mut max_iter, mut total_iter, mut solves, mut clamp_warnings) = (0usize, 0usize, 0usize, 0usize);
    for m in (0..steps).rev() {
        let t = engine.time(m);
        let (a, zm) = engine.cond_exp_z(m, &y[m + 1], n).map_err(|e| e.at_layer(m))?;
        let s = barrier_layer(scenario, engine, m);
        let len = engine.layer_len(m);

        let mut ym = vec![0.0; len * n];
        let mut lv = vec![0.0; len * n];
        let solve_node = |scratch: &mut Vec<f64>, (node, (y_n, l_n)): (usize, (&mut [f64], &mut [f64]))| {
            let a_n = &a[node * n..(node + 1) * n];
            match cfg.picard_start {
                PicardStart::Expectation => y_n.copy_from_slice(a_n),
                PicardStart::UpperClamp => y_n.fill(clamp),
                PicardStart::LowerClamp => y_n.fill(-clamp),
            }
            let it = picard_in_place(
                &scenario.generator,
                t,
                a_n,
                &zm[node * n * d..(node + 1) * n * d],
                &s[node * n..(node + 1) * n],
                reflection,
                dt,
                settings,
                y_n,
                l_n,
                scratch,
            )?;
            Ok((it, it))
        };
        let merge = |x: (usize, usize), y: (usize, usize)| Ok((x.0.max(y.0), x.1 + y.1));
        let work = ym.par_chunks_mut(n).zip(lv.par_chunks_mut(n)).enumerate().with_min_len(cfg.grain);
        let (layer_max, layer_total) = if cfg.reverse_nodes {
            work.rev().map_init(|| vec![0.0; n], solve_node).try_reduce(|| (0, 0), merge)
        } else {
            work.map_init(|| vec![0.0; n], solve_node).try_reduce(|| (0, 0), merge)
        }
        .map_err(|e: Error| e.at_layer(m))?;
        max_iter = max_iter.max(layer_max);
        total_iter += layer_total;
        solves += len;

        let mut dkm = vec![0.0; len * n];
        for idx in 0..len * n {
            let mut v = ym[idx];
            if v.abs() > clamp {
                v = v.clamp(-clamp, clamp);
                clamp_warnings += 1;
            }
            ym[idx] = v;
            dkm[idx] = match reflection {
                Reflection::Penalty(k) => dt * k * (s[idx] - v).max(0.0),
                Reflection::Projection => (v - lv[idx]).max(0.0),
            };
        }
        y[m] = ym;
        z[m] = zm;
        dk[m] = dkm;
    }

    let tag = match reflection {
        Reflection::Penalty(k) => SolutionTag::Penalized(k),
        Reflection::Projection => SolutionTag::Direct,
    };
    Ok(DiscreteSolution {
        tag,
        n,
        d,
        dt,
        y,
        z,
        dk,
        picard: PicardStats { max_iter, mean_iter: if solves == 0 { 0.0 } else { total_iter as f64 / solves as f64 } },
        clamp_warnings,
    })
}

/// Solves the penalized system at level `k` (`k = 0` gives the unreflected
/// BSDE).
pub fn solve_penalized(scenario: &Scenario, k: f64, engine: &dyn Engine) -> Result<DiscreteSolution> {
    solve(scenario, engine, Reflection::Penalty(k))
}

/// Same recursion with the constraint enforced by projection,
/// `y = max(S, a + dt f)`, and `dK = y - (a + dt f)`.
pub fn solve_direct_reflected(scenario: &Scenario, engine: &dyn Engine) -> Result<DiscreteSolution> {
    solve(scenario, engine, Reflection::Projection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearQuadratic;

    fn scalar_lq(c: f64) -> GeneratorSpec {
        GeneratorSpec::LinearQuadratic(LinearQuadratic { c: vec![vec![c]], ..Default::default() })
    }

    /// Plain fixed-point iteration of `y -> a + dt k (y - s)^-`.
    fn scalar_fixed_point(a: f64, s: f64, k: f64, dt: f64) -> f64 {
        let mut y = a;
        for _ in 0..10_000 {
            y = a + dt * k * (s - y).max(0.0);
        }
        y
    }

    #[test]
    fn penalty_inactive() {
        assert_eq!(implicit_penalty_step(1.0, 0.0, 100.0, 0.01), 1.0);
    }

    #[test]
    fn penalty_active_matches_fixed_point() {
        let oracle = scalar_fixed_point(-1.0, 0.0, 50.0, 0.01);
        let y = implicit_penalty_step(-1.0, 0.0, 50.0, 0.01);
        assert!((oracle + 2.0 / 3.0).abs() < 1e-12);
        assert!((y - oracle).abs() < 1e-12);
    }

    #[test]
    fn penalty_large_k_reaches_barrier() {
        assert!(implicit_penalty_step(-1.0, 0.0, 1e9, 0.01).abs() < 1e-6);
    }

    #[test]
    fn picard_zero_driver() {
        let out =
            picard_step(&GeneratorSpec::zero(), 0.0, &[0.7], &[0.0], &[-5.0], 0.0, 0.1, PicardSettings::default())
                .unwrap();
        assert_eq!(out.y, vec![0.7]);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn picard_linear_driver() {
        let out =
            picard_step(&scalar_lq(1.0), 0.0, &[1.0], &[0.0], &[-5.0], 0.0, 0.1, PicardSettings::default()).unwrap();
        assert!((out.y[0] - 1.0 / 0.9).abs() < 1e-11);
    }

    #[test]
    fn picard_diverges_when_not_contractive() {
        let err = picard_step(&scalar_lq(20.0), 0.0, &[1.0], &[0.0], &[-5.0], 0.0, 0.1, PicardSettings::default())
            .unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }
}

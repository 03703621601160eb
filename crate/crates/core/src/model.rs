//! Problem data for reflected BSDE systems and sample-based validators for
//! the structural assumptions the construction relies on.
//!
//! A [`Scenario`] bundles the driver `f^i(t, y, z^i)`, the barrier
//! `h^i(t, w)`, the terminal payoff `g^i(w)`, the time grid and the penalty
//! schedule. Coefficients are functions of the Brownian state `w`, so every
//! quantity is Markovian and can be evaluated on a lattice or on simulated
//! paths.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Numerical floor applied to barrier values; the barrier is only bounded
/// above, but lattice arithmetic wants finite numbers.
pub const BARRIER_FLOOR: f64 = -1.0e9;

const SAMPLE_SEED: u64 = 0x005e_ed0f_a55e;

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// An evaluable driver `f^i(t, y, z^i)`.
///
/// `y` has one entry per equation component, `z_i` is the `i`-th row of the
/// `n x d` matrix `Z` (length `d`).
pub trait Driver: Send + Sync + fmt::Debug {
    fn eval(&self, i: usize, t: f64, y: &[f64], z_i: &[f64]) -> f64;
}

/// `f^i(t,y,z^i) = a_i + sum_j c_ij y^j + b_i . z^i + (gamma_i / 2) |z^i|^2`.
///
/// Empty coefficient vectors are read as zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearQuadratic {
    #[serde(default)]
    pub a: Vec<f64>,
    #[serde(default)]
    pub c: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    /// Declared structural constant `C` of the growth bound. When absent the
    /// coefficient-implied constant is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_c: Option<f64>,
}

impl LinearQuadratic {
    /// The scalar purely quadratic driver `(gamma/2)|z|^2`.
    pub fn quadratic(gamma: f64) -> Self {
        LinearQuadratic { gamma: vec![gamma], ..Default::default() }
    }

    pub fn a(&self, i: usize) -> f64 {
        self.a.get(i).copied().unwrap_or(0.0)
    }

    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.c.get(i).and_then(|row| row.get(j)).copied().unwrap_or(0.0)
    }

    pub fn b(&self, i: usize, r: usize) -> f64 {
        self.b.get(i).and_then(|row| row.get(r)).copied().unwrap_or(0.0)
    }

    pub fn gamma(&self, i: usize) -> f64 {
        self.gamma.get(i).copied().unwrap_or(0.0)
    }

    fn check_shape(&self, n: usize, d: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("linear_quadratic: `{what}` has wrong shape")));
        if !(self.a.is_empty() || self.a.len() == n) {
            return bad("a");
        }
        if !(self.gamma.is_empty() || self.gamma.len() == n) {
            return bad("gamma");
        }
        if !(self.c.is_empty() || (self.c.len() == n && self.c.iter().all(|r| r.len() == n))) {
            return bad("c");
        }
        if !(self.b.is_empty() || (self.b.len() == n && self.b.iter().all(|r| r.len() == d))) {
            return bad("b");
        }
        let finite =
            self.a.iter().chain(self.gamma.iter()).chain(self.c.iter().flatten()).chain(self.b.iter().flatten());
        if finite.clone().any(|v| !v.is_finite()) {
            return Err(Error::invalid("linear_quadratic: non-finite coefficient"));
        }
        if self.gamma.iter().any(|&g| g < 0.0) {
            return Err(Error::invalid("linear_quadratic: gamma must be nonnegative"));
        }
        Ok(())
    }

    /// Smallest `C` the coefficients certify for
    /// `|f^i| <= C (1 + |y| + |z^i|^2)`, using `|b||z| <= |b|(1 + |z|^2)/2`.
    pub fn implied_growth_constant(&self, n: usize, d: usize) -> f64 {
        (0..n)
            .map(|i| {
                let c_row = (0..n).map(|j| self.c(i, j).powi(2)).sum::<f64>().sqrt();
                let b_row = (0..d).map(|r| self.b(i, r).powi(2)).sum::<f64>().sqrt();
                (self.a(i).abs() + 0.5 * b_row).max(c_row).max(0.5 * (b_row + self.gamma(i)))
            })
            .fold(0.0, f64::max)
    }
}

impl Driver for LinearQuadratic {
    fn eval(&self, i: usize, _t: f64, y: &[f64], z_i: &[f64]) -> f64 {
        let mut f = self.a(i);
        if let Some(row) = self.c.get(i) {
            f += row.iter().zip(y).map(|(c, y)| c * y).sum::<f64>();
        }
        if let Some(row) = self.b.get(i) {
            f += row.iter().zip(z_i).map(|(b, z)| b * z).sum::<f64>();
        }
        let g = self.gamma(i);
        if g != 0.0 {
            f += 0.5 * g * z_i.iter().map(|z| z * z).sum::<f64>();
        }
        f
    }
}

/// A user-supplied driver with an optional declared growth constant.
#[derive(Clone, Debug)]
pub struct CustomDriver {
    pub driver: Arc<dyn Driver>,
    pub declared_c: Option<f64>,
}

/// Driver family tag plus coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeneratorSpec {
    LinearQuadratic(LinearQuadratic),
    /// Extension point; not representable in scenario files.
    #[serde(skip)]
    Custom(CustomDriver),
}

impl GeneratorSpec {
    pub fn zero() -> Self {
        GeneratorSpec::LinearQuadratic(LinearQuadratic::default())
    }

    #[inline]
    pub fn eval(&self, i: usize, t: f64, y: &[f64], z_i: &[f64]) -> f64 {
        match self {
            GeneratorSpec::LinearQuadratic(lq) => lq.eval(i, t, y, z_i),
            GeneratorSpec::Custom(c) => c.driver.eval(i, t, y, z_i),
        }
    }

    /// Bound the growth validator checks against.
    pub fn growth_bound(&self, n: usize, d: usize) -> Option<f64> {
        match self {
            GeneratorSpec::LinearQuadratic(lq) => {
                Some(lq.declared_c.unwrap_or_else(|| lq.implied_growth_constant(n, d)))
            }
            GeneratorSpec::Custom(c) => c.declared_c,
        }
    }
}

// ---------------------------------------------------------------------------
// Barrier and terminal data
// ---------------------------------------------------------------------------

/// `h^i(t, w) = min(cap_i, alpha_i + beta_i . w + delta_i t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClampedAffineBarrier {
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub beta: Vec<Vec<f64>>,
    #[serde(default)]
    pub delta: Vec<f64>,
    pub cap: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BarrierKind {
    ClampedAffine(ClampedAffineBarrier),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    #[serde(flatten)]
    pub kind: BarrierKind,
    /// Declared upper bound on the positive part of the barrier.
    pub s_plus_max: f64,
}

impl BarrierSpec {
    pub fn clamped_affine(
        alpha: Vec<f64>,
        beta: Vec<Vec<f64>>,
        delta: Vec<f64>,
        cap: Vec<f64>,
        s_plus_max: f64,
    ) -> Self {
        BarrierSpec { kind: BarrierKind::ClampedAffine(ClampedAffineBarrier { alpha, beta, delta, cap }), s_plus_max }
    }

    /// Constant barrier `h^i = level` for all `n` components.
    pub fn constant(n: usize, level: f64) -> Self {
        Self::clamped_affine(vec![level; n], vec![], vec![], vec![level; n], level.max(0.0))
    }

    #[inline]
    pub fn eval(&self, i: usize, t: f64, w: &[f64]) -> f64 {
        let BarrierKind::ClampedAffine(p) = &self.kind;
        let mut v = p.alpha[i];
        if let Some(beta) = p.beta.get(i) {
            v += beta.iter().zip(w).map(|(b, w)| b * w).sum::<f64>();
        }
        if let Some(delta) = p.delta.get(i) {
            v += delta * t;
        }
        v.min(p.cap[i]).max(BARRIER_FLOOR)
    }

    fn check_shape(&self, n: usize, d: usize) -> Result<()> {
        let BarrierKind::ClampedAffine(p) = &self.kind;
        let ok = p.alpha.len() == n
            && p.cap.len() == n
            && (p.delta.is_empty() || p.delta.len() == n)
            && (p.beta.is_empty() || (p.beta.len() == n && p.beta.iter().all(|r| r.len() == d)));
        if !ok {
            return Err(Error::invalid("barrier: coefficient shapes do not match (n, d)"));
        }
        let all = p.alpha.iter().chain(&p.delta).chain(p.beta.iter().flatten());
        if all.clone().any(|v| !v.is_finite()) || p.cap.iter().any(|c| c.is_nan()) || !self.s_plus_max.is_finite() {
            return Err(Error::invalid("barrier: non-finite coefficient"));
        }
        Ok(())
    }
}

/// `g^i(w) = clamp(alpha_i + beta_i . w, -xi_max, xi_max)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClampedAffineTerminal {
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub beta: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TerminalKind {
    ClampedAffine(ClampedAffineTerminal),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalSpec {
    #[serde(flatten)]
    pub kind: TerminalKind,
    pub xi_max: f64,
}

impl TerminalSpec {
    pub fn clamped_affine(alpha: Vec<f64>, beta: Vec<Vec<f64>>, xi_max: f64) -> Self {
        TerminalSpec { kind: TerminalKind::ClampedAffine(ClampedAffineTerminal { alpha, beta }), xi_max }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self::clamped_affine(vec![value; n], vec![], value.abs())
    }

    #[inline]
    pub fn eval(&self, i: usize, w: &[f64]) -> f64 {
        let TerminalKind::ClampedAffine(p) = &self.kind;
        let mut v = p.alpha[i];
        if let Some(beta) = p.beta.get(i) {
            v += beta.iter().zip(w).map(|(b, w)| b * w).sum::<f64>();
        }
        v.clamp(-self.xi_max, self.xi_max)
    }

    fn check_shape(&self, n: usize, d: usize) -> Result<()> {
        let TerminalKind::ClampedAffine(p) = &self.kind;
        let ok =
            p.alpha.len() == n && (p.beta.is_empty() || (p.beta.len() == n && p.beta.iter().all(|r| r.len() == d)));
        if !ok {
            return Err(Error::invalid("terminal: coefficient shapes do not match (n, d)"));
        }
        if p.alpha.iter().chain(p.beta.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("terminal: non-finite coefficient"));
        }
        if !(self.xi_max.is_finite() && self.xi_max >= 0.0) {
            return Err(Error::invalid("terminal: xi_max must be finite and nonnegative"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Penalty schedule and numerical configuration
// ---------------------------------------------------------------------------

/// Geometric penalty levels `k_j = k0 * rho^j`, `j = 0..count`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub k0: f64,
    pub rho: f64,
    pub count: usize,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        PenaltySchedule { k0: 1.0, rho: 2.0, count: 13 }
    }
}

impl PenaltySchedule {
    pub fn levels(&self) -> Vec<f64> {
        (0..self.count).map(|j| self.k0 * self.rho.powi(j as i32)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k0.is_finite() && self.k0 > 0.0) {
            return Err(Error::invalid("penalty schedule: k0 must be finite and positive"));
        }
        if !(self.rho.is_finite() && self.rho > 1.0) {
            return Err(Error::invalid("penalty schedule: rho must exceed 1"));
        }
        if self.count == 0 {
            return Err(Error::invalid("penalty schedule: count must be at least 1"));
        }
        if self.levels().iter().any(|k| !k.is_finite()) {
            return Err(Error::invalid("penalty schedule: levels overflow"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Lattice,
    Mc,
}

/// Initial iterate of the per-node fixed-point iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PicardStart {
    /// Start from the conditional expectation `a`.
    #[default]
    Expectation,
    /// Start from `+C_clamp`.
    UpperClamp,
    /// Start from `-C_clamp`.
    LowerClamp,
}

/// Engine selection, solver knobs and verification tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub backend: Backend,
    /// Max nodes on the final lattice layer, `(M+1)^d`.
    pub node_budget: usize,
    pub seed: u64,
    pub paths: usize,
    pub basis_degree: usize,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub picard_start: PicardStart,
    /// Clamp level for `Y`; default `10 (xi_max + S+_max + 1)`.
    pub clamp: Option<f64>,
    /// Minimum number of nodes per parallel task.
    pub grain: usize,
    /// Process nodes of a layer in reverse order.
    pub reverse_nodes: bool,
    pub tol_limit: f64,
    pub tol_skorokhod: f64,
    pub tol_contact: f64,
    pub tol_flat: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            backend: Backend::Lattice,
            node_budget: 1_000_000,
            seed: 0,
            paths: 10_000,
            basis_degree: 3,
            picard_tol: 1e-12,
            picard_max_iter: 50,
            picard_start: PicardStart::Expectation,
            clamp: None,
            grain: 256,
            reverse_nodes: false,
            tol_limit: 1e-4,
            tol_skorokhod: 1e-3,
            tol_contact: 1e-3,
            tol_flat: 1e-3,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let tols = [
            ("picard_tol", self.picard_tol),
            ("tol_limit", self.tol_limit),
            ("tol_skorokhod", self.tol_skorokhod),
            ("tol_contact", self.tol_contact),
            ("tol_flat", self.tol_flat),
        ];
        for (name, v) in tols {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("config: {name} must be positive, got {v}")));
            }
        }
        if let Some(c) = self.clamp {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid("config: clamp must be positive"));
            }
        }
        if self.picard_max_iter == 0 {
            return Err(Error::invalid("config: picard_max_iter must be at least 1"));
        }
        if self.grain == 0 {
            return Err(Error::invalid("config: grain must be at least 1"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

/// Complete problem description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub steps: usize,
    pub generator: GeneratorSpec,
    pub barrier: BarrierSpec,
    pub terminal: TerminalSpec,
    #[serde(default)]
    pub penalty_schedule: PenaltySchedule,
    #[serde(default)]
    pub engine_config: EngineConfig,
}

impl Scenario {
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.dt()
    }

    /// Clamp level applied to `Y` by the solvers.
    pub fn clamp_level(&self) -> f64 {
        self.engine_config.clamp.unwrap_or(10.0 * (self.terminal.xi_max + self.barrier.s_plus_max.max(0.0) + 1.0))
    }

    /// Dimension and shape checks only; no sampling.
    pub fn check_structure(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::invalid("n and d must be at least 1"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid("T must be finite and positive"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if let GeneratorSpec::LinearQuadratic(lq) = &self.generator {
            lq.check_shape(self.n, self.d)?;
        }
        self.barrier.check_shape(self.n, self.d)?;
        self.terminal.check_shape(self.n, self.d)?;
        self.penalty_schedule.validate()?;
        self.engine_config.validate()
    }

    /// Runs every validator on the default sample sets.
    pub fn assumption_reports(&self) -> Result<Vec<AssumptionReport>> {
        self.check_structure()?;
        let samples = DefaultSamples::new(self);
        Ok(vec![
            validate_growth(&self.generator, self.n, self.d, &samples.growth)?,
            validate_off_diagonal_monotonicity(&self.generator, self.n, &samples.pairs, 1e-12)?,
            validate_bounds(&self.barrier, &self.terminal, self.n, self.horizon, &samples.states)?,
        ])
    }

    /// Rejects the scenario if any validator fails; the error carries the
    /// first witness.
    pub fn ensure_valid(&self) -> Result<()> {
        for report in self.assumption_reports()? {
            if let Status::Fail { witness } = &report.status {
                return Err(Error::AssumptionViolated {
                    assumption: report.assumption.to_string(),
                    detail: witness.to_string(),
                });
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        match serde_json::to_vec(self) {
            Ok(bytes) => hex::encode(Sha256::digest(&bytes)),
            Err(_) => "custom-driver".to_string(),
        }
    }
}

// ---------------------------------------------------------------------------
// Validators
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assumption {
    Growth,
    OffDiagonalMonotonicity,
    Bounds,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Assumption::Growth => "growth",
            Assumption::OffDiagonalMonotonicity => "off-diagonal monotonicity",
            Assumption::Bounds => "barrier/terminal bounds",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    Growth { component: usize, t: f64, y: Vec<f64>, z: Vec<f64>, value: f64, bound: f64 },
    Monotonicity { component: usize, t: f64, y: Vec<f64>, y_bar: Vec<f64>, z: Vec<f64>, f: f64, f_bar: f64 },
    Bound { check: String, component: usize, t: f64, w: Vec<f64>, value: f64, limit: f64 },
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Witness::Growth { component, t, y, z, value, bound } => {
                write!(f, "|f^{component}(t={t}, y={y:?}, z={z:?})| = {value} > {bound}")
            }
            Witness::Monotonicity { component, t, y, y_bar, f: fv, f_bar, .. } => {
                write!(f, "f^{component}(t={t}, y={y:?}) = {fv} > f^{component}(y_bar={y_bar:?}) = {f_bar}")
            }
            Witness::Bound { check, component, t, w, value, limit } => {
                write!(f, "{check}: component {component} at t={t}, w={w:?}: {value} vs {limit}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail { witness: Witness },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub assumption: Assumption,
    pub status: Status,
    /// Smallest slack over the samples (negative on failure).
    pub worst_margin: f64,
    /// Sampled estimate of the structural constant (growth check only).
    pub estimated_c: Option<f64>,
    pub samples: usize,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        matches!(self.status, Status::Pass)
    }
}

/// A driver argument `(t, y, Z)` with `Z` stored row-major as `n x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthSample {
    pub t: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// `(y, y_bar)` with `y^i = y_bar^i` and `y^j <= y_bar^j` off the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityPair {
    pub component: usize,
    pub t: f64,
    pub y: Vec<f64>,
    pub y_bar: Vec<f64>,
    pub z_i: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateSample {
    pub t: f64,
    pub w: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sampled check of `|f^i(t,y,z^i)| <= C (1 + |y| + |z^i|^2)`.
pub fn validate_growth(gen: &GeneratorSpec, n: usize, d: usize, samples: &[GrowthSample]) -> Result<AssumptionReport> {
    if samples.is_empty() {
        return Err(Error::invalid("growth validator needs at least one sample"));
    }
    let mut worst: Option<(f64, usize, usize, f64)> = None;
    for (s_idx, s) in samples.iter().enumerate() {
        if s.y.len() != n || s.z.len() != n * d {
            return Err(Error::invalid(format!("growth sample {s_idx} has wrong shape")));
        }
        let y_norm = norm(&s.y);
        for i in 0..n {
            let z_i = &s.z[i * d..(i + 1) * d];
            let value = gen.eval(i, s.t, &s.y, z_i).abs();
            let ratio = value / (1.0 + y_norm + z_i.iter().map(|z| z * z).sum::<f64>());
            if worst.is_none_or(|w| ratio > w.0) {
                worst = Some((ratio, s_idx, i, value));
            }
        }
    }
    let (ratio, s_idx, i, value) = worst.expect("non-empty samples");
    let bound = gen.growth_bound(n, d);
    let ok = ratio.is_finite() && bound.is_none_or(|c| ratio <= c * (1.0 + 1e-12));
    let status = if ok {
        Status::Pass
    } else {
        let s = &samples[s_idx];
        let z_i = s.z[i * d..(i + 1) * d].to_vec();
        let limit = bound.unwrap_or(f64::INFINITY) * (1.0 + norm(&s.y) + z_i.iter().map(|z| z * z).sum::<f64>());
        Status::Fail { witness: Witness::Growth { component: i, t: s.t, y: s.y.clone(), z: z_i, value, bound: limit } }
    };
    Ok(AssumptionReport {
        assumption: Assumption::Growth,
        status,
        worst_margin: bound.map_or(f64::INFINITY, |c| c - ratio),
        estimated_c: Some(ratio),
        samples: samples.len(),
    })
}

/// Sampled check of `f^i(t,y,z^i) <= f^i(t,y_bar,z^i)` on the off-diagonal
/// partial order. Built-in families additionally get a closed-form check of
/// the sign of the off-diagonal coupling.
pub fn validate_off_diagonal_monotonicity(
    gen: &GeneratorSpec,
    n: usize,
    pairs: &[MonotonicityPair],
    tol: f64,
) -> Result<AssumptionReport> {
    let mut worst_margin = f64::INFINITY;
    let mut witness = None;
    let mut consider = |margin: f64, p: &MonotonicityPair, f: f64, f_bar: f64| {
        if margin < worst_margin {
            worst_margin = margin;
            if margin < -tol {
                witness = Some(Witness::Monotonicity {
                    component: p.component,
                    t: p.t,
                    y: p.y.clone(),
                    y_bar: p.y_bar.clone(),
                    z: p.z_i.clone(),
                    f,
                    f_bar,
                });
            }
        }
    };

    for (idx, p) in pairs.iter().enumerate() {
        if p.y.len() != n || p.y_bar.len() != n || p.component >= n {
            return Err(Error::invalid(format!("monotonicity pair {idx} has wrong shape")));
        }
        let ordered = (0..n).all(|j| if j == p.component { p.y[j] == p.y_bar[j] } else { p.y[j] <= p.y_bar[j] });
        if !ordered {
            return Err(Error::invalid(format!("monotonicity pair {idx} violates y^i = y_bar^i, y^j <= y_bar^j")));
        }
        let f = gen.eval(p.component, p.t, &p.y, &p.z_i);
        let f_bar = gen.eval(p.component, p.t, &p.y_bar, &p.z_i);
        consider(f_bar - f, p, f, f_bar);
    }

    if let GeneratorSpec::LinearQuadratic(lq) = gen {
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                if lq.c(i, j) < 0.0 {
                    let mut y_bar = vec![0.0; n];
                    y_bar[j] = 1.0;
                    let d = lq.b.get(i).map_or(0, Vec::len);
                    let p = MonotonicityPair { component: i, t: 0.0, y: vec![0.0; n], y_bar, z_i: vec![0.0; d] };
                    let f = gen.eval(i, 0.0, &p.y, &p.z_i);
                    let f_bar = gen.eval(i, 0.0, &p.y_bar, &p.z_i);
                    consider(f_bar - f, &p, f, f_bar);
                }
            }
        }
    }

    let status = match witness {
        Some(witness) => Status::Fail { witness },
        None => Status::Pass,
    };
    Ok(AssumptionReport {
        assumption: Assumption::OffDiagonalMonotonicity,
        status,
        worst_margin,
        estimated_c: None,
        samples: pairs.len(),
    })
}

/// Checks `h^+ <= S+_max`, `|g| <= xi_max` and `g >= h(T, .)` on samples.
pub fn validate_bounds(
    barrier: &BarrierSpec,
    terminal: &TerminalSpec,
    n: usize,
    horizon: f64,
    samples: &[StateSample],
) -> Result<AssumptionReport> {
    if samples.is_empty() {
        return Err(Error::invalid("bounds validator needs at least one sample"));
    }
    const TOL: f64 = 1e-12;
    let mut worst_margin = f64::INFINITY;
    let mut witness = None;
    for s in samples {
        for i in 0..n {
            let h = barrier.eval(i, s.t, &s.w);
            let g = terminal.eval(i, &s.w);
            let h_t = barrier.eval(i, horizon, &s.w);
            let checks = [
                (
                    "barrier positive part <= s_plus_max",
                    s.t,
                    h.max(0.0),
                    barrier.s_plus_max,
                    barrier.s_plus_max - h.max(0.0),
                ),
                ("|terminal| <= xi_max", horizon, g.abs(), terminal.xi_max, terminal.xi_max - g.abs()),
                ("terminal >= barrier at T", horizon, g, h_t, g - h_t),
            ];
            for (check, t, value, limit, margin) in checks {
                if margin < worst_margin {
                    worst_margin = margin;
                    if margin < -TOL {
                        witness = Some(Witness::Bound {
                            check: check.to_string(),
                            component: i,
                            t,
                            w: s.w.clone(),
                            value,
                            limit,
                        });
                    }
                }
            }
        }
    }
    let status = match witness {
        Some(witness) => Status::Fail { witness },
        None => Status::Pass,
    };
    Ok(AssumptionReport {
        assumption: Assumption::Bounds,
        status,
        worst_margin,
        estimated_c: None,
        samples: samples.len(),
    })
}

/// Deterministic sample sets used when a scenario is loaded.
#[derive(Clone, Debug)]
pub struct DefaultSamples {
    pub growth: Vec<GrowthSample>,
    pub pairs: Vec<MonotonicityPair>,
    pub states: Vec<StateSample>,
}

impl DefaultSamples {
    pub fn new(scenario: &Scenario) -> Self {
        let (n, d, horizon) = (scenario.n, scenario.d, scenario.horizon);
        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
        let y_range = scenario.clamp_level();
        let w_range = 6.0 * horizon.sqrt() + 1.0;

        let mut growth = vec![GrowthSample { t: 0.0, y: vec![0.0; n], z: vec![0.0; n * d] }];
        for _ in 0..512 {
            let t = rng.random_range(0.0..=horizon);
            let y = (0..n).map(|_| rng.random_range(-y_range..=y_range)).collect();
            let scale = 10f64.powf(rng.random_range(-2.0..=2.0));
            let z = (0..n * d).map(|_| scale * rng.random_range(-1.0..=1.0)).collect();
            growth.push(GrowthSample { t, y, z });
        }

        let mut pairs = Vec::new();
        if n > 1 {
            for _ in 0..256 {
                let component = rng.random_range(0..n);
                let t = rng.random_range(0.0..=horizon);
                let y: Vec<f64> = (0..n).map(|_| rng.random_range(-y_range..=y_range)).collect();
                let y_bar = y
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| if j == component { v } else { v + rng.random_range(0.0..=y_range) })
                    .collect();
                let z_i = (0..d).map(|_| rng.random_range(-2.0..=2.0)).collect();
                pairs.push(MonotonicityPair { component, t, y, y_bar, z_i });
            }
        }

        let mut states = Vec::new();
        let grid = 64;
        for a in 0..=grid {
            let t = horizon * a as f64 / grid as f64;
            for b in 0..=grid {
                let x = -w_range + 2.0 * w_range * b as f64 / grid as f64;
                states.push(StateSample { t, w: vec![x; d] });
            }
        }
        for _ in 0..1024 {
            let t = rng.random_range(0.0..=horizon);
            let w = (0..d).map(|_| rng.random_range(-w_range..=w_range)).collect();
            states.push(StateSample { t, w });
        }
        DefaultSamples { growth, pairs, states }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lq(a: Vec<f64>, c: Vec<Vec<f64>>, gamma: Vec<f64>) -> GeneratorSpec {
        GeneratorSpec::LinearQuadratic(LinearQuadratic { a, c, gamma, ..Default::default() })
    }

    #[test]
    fn growth_quadratic_sample() {
        let gen = lq(vec![0.0], vec![], vec![1.0]);
        let s = [GrowthSample { t: 0.0, y: vec![0.0], z: vec![2.0] }];
        let r = validate_growth(&gen, 1, 1, &s).unwrap();
        assert!(r.passed());
        assert!((r.estimated_c.unwrap() - 0.4).abs() < 1e-15);
        assert!(gen.growth_bound(1, 1).unwrap() >= 0.5);
    }

    #[test]
    fn growth_zero_generator() {
        let s = [GrowthSample { t: 0.3, y: vec![4.0], z: vec![-1.0] }];
        let r = validate_growth(&GeneratorSpec::zero(), 1, 1, &s).unwrap();
        assert!(r.passed());
        assert_eq!(r.estimated_c, Some(0.0));
    }

    #[test]
    fn growth_declared_constant_too_small() {
        let gen = GeneratorSpec::LinearQuadratic(LinearQuadratic {
            a: vec![5.0],
            declared_c: Some(1.0),
            ..Default::default()
        });
        let s = [GrowthSample { t: 0.0, y: vec![0.0], z: vec![0.0] }];
        let r = validate_growth(&gen, 1, 1, &s).unwrap();
        match r.status {
            Status::Fail { witness: Witness::Growth { value, bound, .. } } => {
                assert_eq!(value, 5.0);
                assert_eq!(bound, 1.0);
            }
            other => panic!("expected growth failure, got {other:?}"),
        }
    }

    #[test]
    fn growth_empty_samples_rejected() {
        assert!(matches!(validate_growth(&GeneratorSpec::zero(), 1, 1, &[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn monotonicity_positive_coupling() {
        let gen = lq(vec![], vec![vec![0.0, 1.0], vec![0.0, 0.0]], vec![]);
        let p = MonotonicityPair { component: 0, t: 0.0, y: vec![0.0, 0.0], y_bar: vec![0.0, 1.0], z_i: vec![0.0] };
        let r = validate_off_diagonal_monotonicity(&gen, 2, &[p], 1e-12).unwrap();
        assert!(r.passed());
        assert_eq!(r.worst_margin, 1.0);
    }

    #[test]
    fn monotonicity_scalar_is_vacuous() {
        let r = validate_off_diagonal_monotonicity(&lq(vec![1.0], vec![vec![3.0]], vec![]), 1, &[], 1e-12).unwrap();
        assert!(r.passed());
    }

    #[test]
    fn monotonicity_negative_coupling_fails() {
        let gen = lq(vec![], vec![vec![0.0, -1.0], vec![0.0, 0.0]], vec![]);
        let r = validate_off_diagonal_monotonicity(&gen, 2, &[], 1e-12).unwrap();
        assert!(matches!(r.status, Status::Fail { witness: Witness::Monotonicity { component: 0, .. } }));
    }

    #[test]
    fn monotonicity_rejects_unordered_pair() {
        let p = MonotonicityPair { component: 0, t: 0.0, y: vec![0.0, 1.0], y_bar: vec![0.0, 0.0], z_i: vec![0.0] };
        let err = validate_off_diagonal_monotonicity(&GeneratorSpec::zero(), 2, &[p], 1e-12).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    fn states() -> Vec<StateSample> {
        (0..=20).map(|k| StateSample { t: k as f64 / 20.0, w: vec![-3.0 + 0.3 * k as f64] }).collect()
    }

    #[test]
    fn bounds_inactive_barrier() {
        let r = validate_bounds(&BarrierSpec::constant(1, -10.0), &TerminalSpec::constant(1, 0.0), 1, 1.0, &states())
            .unwrap();
        assert!(r.passed());
    }

    #[test]
    fn bounds_clamped_cap() {
        let barrier = BarrierSpec::clamped_affine(vec![0.0], vec![vec![5.0]], vec![], vec![1.0], 1.0);
        let terminal = TerminalSpec::constant(1, 1.0);
        assert!(validate_bounds(&barrier, &terminal, 1, 1.0, &states()).unwrap().passed());
    }

    #[test]
    fn bounds_terminal_below_barrier() {
        let r = validate_bounds(&BarrierSpec::constant(1, 1.0), &TerminalSpec::constant(1, 0.0), 1, 1.0, &states())
            .unwrap();
        match r.status {
            Status::Fail { witness: Witness::Bound { check, .. } } => assert!(check.contains("terminal >= barrier")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schedule_levels() {
        let s = PenaltySchedule { k0: 1.0, rho: 2.0, count: 4 };
        assert_eq!(s.levels(), vec![1.0, 2.0, 4.0, 8.0]);
        assert!(PenaltySchedule { k0: 1.0, rho: 1.0, count: 3 }.validate().is_err());
    }

    #[test]
    fn barrier_floor_applies() {
        let b = BarrierSpec::constant(1, -1e300);
        assert_eq!(b.eval(0, 0.0, &[0.0]), BARRIER_FLOOR);
    }
}

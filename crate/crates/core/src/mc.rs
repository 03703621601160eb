//! Monte Carlo backend: seeded Brownian path bundles and least-squares
//! regression estimates of conditional expectations.

use std::borrow::Cow;
use std::io::{self, Read, Write};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::engine::{Engine, EngineKind};
use crate::error::{Error, Result};

/// Relative threshold on the diagonal of `R` below which a feature is
/// treated as linearly dependent on the preceding ones.
pub const RANK_TOL: f64 = 1e-10;

/// Polynomial features of the standardized state, all monomials of total
/// degree `<= degree`, constant first.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionBasis {
    d: usize,
    degree: usize,
    exponents: Vec<Vec<u32>>,
}

impl RegressionBasis {
    pub fn new(d: usize, degree: usize) -> Self {
        let mut exponents = Vec::new();
        for total in 0..=degree {
            let mut current = vec![0u32; d];
            push_compositions(&mut exponents, &mut current, 0, total as u32);
        }
        RegressionBasis { d, degree, exponents }
    }

    pub fn size(&self) -> usize {
        self.exponents.len()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn feature_name(&self, k: usize) -> String {
        let parts: Vec<String> = self.exponents[k]
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(r, &e)| if e == 1 { format!("w{r}") } else { format!("w{r}^{e}") })
            .collect();
        if parts.is_empty() {
            "1".to_string()
        } else {
            parts.join("*")
        }
    }

    /// Evaluates every feature at `w` (already standardized).
    pub fn eval(&self, w: &[f64], out: &mut [f64]) {
        for (o, exps) in out.iter_mut().zip(&self.exponents) {
            *o = exps.iter().zip(w).map(|(&e, &x)| x.powi(e as i32)).product();
        }
    }
}

fn push_compositions(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        push_compositions(out, current, pos + 1, remaining - e);
    }
    current[pos] = 0;
}

/// Simulated Brownian paths. Storage is layer-major: entry
/// `(m * paths + p) * d + r`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle {
    pub seed: u64,
    pub paths: usize,
    pub steps: usize,
    pub d: usize,
    pub horizon: f64,
    increments: Vec<f64>,
    states: Vec<f64>,
}

impl PathBundle {
    /// Draws `paths` paths of `steps` Gaussian increments with variance
    /// `horizon / steps`. Path `p` uses ChaCha stream `p` of `seed`, so the
    /// bundle does not depend on thread scheduling.
    pub fn simulate(
        seed: u64,
        paths: usize,
        steps: usize,
        d: usize,
        horizon: f64,
        basis: &RegressionBasis,
    ) -> Result<Self> {
        if paths < 2 * basis.size() {
            return Err(Error::invalid(format!(
                "{paths} paths is too few for a regression basis of size {} (need at least {})",
                basis.size(),
                2 * basis.size()
            )));
        }
        if steps == 0 || d == 0 || !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid("path bundle needs steps >= 1, d >= 1, T > 0"));
        }
        let sd = (horizon / steps as f64).sqrt();
        let per_path: Vec<Vec<f64>> = (0..paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(p as u64);
                (0..steps * d)
                    .map(|_| {
                        let x: f64 = StandardNormal.sample(&mut rng);
                        sd * x
                    })
                    .collect()
            })
            .collect();
        let mut increments = vec![0.0; steps * paths * d];
        for (p, row) in per_path.iter().enumerate() {
            for m in 0..steps {
                let dst = (m * paths + p) * d;
                increments[dst..dst + d].copy_from_slice(&row[m * d..(m + 1) * d]);
            }
        }
        Ok(Self::from_increments(seed, paths, steps, d, horizon, increments))
    }

    fn from_increments(seed: u64, paths: usize, steps: usize, d: usize, horizon: f64, increments: Vec<f64>) -> Self {
        let layer = paths * d;
        let mut states = vec![0.0; (steps + 1) * layer];
        for m in 0..steps {
            let (done, rest) = states.split_at_mut((m + 1) * layer);
            let prev = &done[m * layer..];
            let inc = &increments[m * layer..(m + 1) * layer];
            for ((s, w), dw) in rest[..layer].iter_mut().zip(prev).zip(inc) {
                *s = w + dw;
            }
        }
        PathBundle { seed, paths, steps, d, horizon, increments, states }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `W[p, m, r]`.
    pub fn state(&self, p: usize, m: usize, r: usize) -> f64 {
        self.states[(m * self.paths + p) * self.d + r]
    }

    /// `dW[p, m, r] = W[p, m+1, r] - W[p, m, r]`.
    pub fn increment(&self, p: usize, m: usize, r: usize) -> f64 {
        self.increments[(m * self.paths + p) * self.d + r]
    }

    pub fn layer_states(&self, m: usize) -> &[f64] {
        let layer = self.paths * self.d;
        &self.states[m * layer..(m + 1) * layer]
    }

    pub fn layer_increments(&self, m: usize) -> &[f64] {
        let layer = self.paths * self.d;
        &self.increments[m * layer..(m + 1) * layer]
    }

    /// Header `{seed: u64, N: u64, M: u64, d: u64, T: f64}` followed by the
    /// increments in path-major row-major order, all little-endian.
    pub fn write_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(&self.seed.to_le_bytes())?;
        out.write_all(&(self.paths as u64).to_le_bytes())?;
        out.write_all(&(self.steps as u64).to_le_bytes())?;
        out.write_all(&(self.d as u64).to_le_bytes())?;
        out.write_all(&self.horizon.to_le_bytes())?;
        for p in 0..self.paths {
            for m in 0..self.steps {
                for r in 0..self.d {
                    out.write_all(&self.increment(p, m, r).to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut input: R) -> io::Result<Self> {
        let mut buf = [0u8; 8];
        let mut next = |input: &mut R| -> io::Result<[u8; 8]> {
            input.read_exact(&mut buf)?;
            Ok(buf)
        };
        let seed = u64::from_le_bytes(next(&mut input)?);
        let paths = u64::from_le_bytes(next(&mut input)?) as usize;
        let steps = u64::from_le_bytes(next(&mut input)?) as usize;
        let d = u64::from_le_bytes(next(&mut input)?) as usize;
        let horizon = f64::from_le_bytes(next(&mut input)?);
        let mut increments = vec![0.0; paths * steps * d];
        for p in 0..paths {
            for m in 0..steps {
                for r in 0..d {
                    increments[(m * paths + p) * d + r] = f64::from_le_bytes(next(&mut input)?);
                }
            }
        }
        Ok(Self::from_increments(seed, paths, steps, d, horizon, increments))
    }
}

/// Least-squares fit of each column of `rhs` (`paths x cols`, row-major) on
/// the basis evaluated at `W[., m, .]`; returns fitted values in the same
/// layout.
fn regress(bundle: &PathBundle, basis: &RegressionBasis, m: usize, rhs: &[f64], cols: usize) -> Result<Vec<f64>> {
    let n = bundle.paths;
    if rhs.len() != n * cols {
        return Err(Error::invalid(format!("regression input has {} entries, expected {}", rhs.len(), n * cols)));
    }
    if m == 0 {
        // W_0 = 0 on every path: only the constant feature is identifiable.
        let mut means = vec![0.0; cols];
        for row in rhs.chunks(cols) {
            for (s, v) in means.iter_mut().zip(row) {
                *s += v;
            }
        }
        means.iter_mut().for_each(|s| *s /= n as f64);
        return Ok(means.iter().copied().cycle().take(n * cols).collect());
    }

    let k = basis.size();
    let scale = 1.0 / (m as f64 * bundle.dt()).sqrt();
    let states = bundle.layer_states(m);
    let mut design = DMatrix::<f64>::zeros(n, k);
    let mut feat = vec![0.0; k];
    let mut w = vec![0.0; bundle.d];
    for p in 0..n {
        for (x, s) in w.iter_mut().zip(&states[p * bundle.d..(p + 1) * bundle.d]) {
            *x = s * scale;
        }
        basis.eval(&w, &mut feat);
        for (j, f) in feat.iter().enumerate() {
            design[(p, j)] = *f;
        }
    }
    let col_norms: Vec<f64> = (0..k).map(|j| design.column(j).norm()).collect();
    let qr = design.clone().qr();
    let r = qr.r();
    for j in 0..k {
        let pivot = r[(j, j)].abs();
        if pivot.is_nan() || pivot <= RANK_TOL * col_norms[j].max(f64::MIN_POSITIVE) {
            return Err(Error::Regression { layer: m, feature: basis.feature_name(j) });
        }
    }
    let mut b = DMatrix::<f64>::from_row_slice(n, cols, rhs);
    qr.q_tr_mul(&mut b);
    let top = b.rows(0, k).into_owned();
    let beta = r
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::Regression { layer: m, feature: "triangular solve".to_string() })?;
    let fitted = design * beta;
    let mut out = vec![0.0; n * cols];
    for p in 0..n {
        for c in 0..cols {
            out[p * cols + c] = fitted[(p, c)];
        }
    }
    Ok(out)
}

/// Regression estimate of `E[values | W_m]` at every path.
pub fn cond_exp_regress(bundle: &PathBundle, m: usize, values: &[f64], basis: &RegressionBasis) -> Result<Vec<f64>> {
    regress(bundle, basis, m, values, 1)
}

/// Regression estimate of `E[values * dW_m^r | W_m] / dt`, `d` entries per
/// path.
pub fn cond_z_regress(bundle: &PathBundle, m: usize, values: &[f64], basis: &RegressionBasis) -> Result<Vec<f64>> {
    z_regress(bundle, basis, m, values, 1)
}

/// Regressands for the Z estimate, optionally preceded by the values
/// themselves so that one factorization serves both estimates.
fn z_rhs(bundle: &PathBundle, m: usize, values: &[f64], width: usize, with_values: bool) -> Result<Vec<f64>> {
    let (n, d) = (bundle.paths, bundle.d);
    if values.len() != n * width {
        return Err(Error::invalid("z regression input has wrong length"));
    }
    let inv_dt = 1.0 / bundle.dt();
    let inc = bundle.layer_increments(m);
    let lead = if with_values { width } else { 0 };
    let cols = lead + width * d;
    let mut rhs = vec![0.0; n * cols];
    for p in 0..n {
        let row = &mut rhs[p * cols..(p + 1) * cols];
        row[..lead].copy_from_slice(&values[p * width..p * width + lead]);
        for c in 0..width {
            for r in 0..d {
                row[lead + c * d + r] = values[p * width + c] * inc[p * d + r] * inv_dt;
            }
        }
    }
    Ok(rhs)
}

fn z_regress(bundle: &PathBundle, basis: &RegressionBasis, m: usize, values: &[f64], width: usize) -> Result<Vec<f64>> {
    let rhs = z_rhs(bundle, m, values, width, false)?;
    regress(bundle, basis, m, &rhs, width * bundle.d)
}

/// Regression engine over a fixed path bundle.
#[derive(Clone, Debug)]
pub struct McEngine {
    bundle: PathBundle,
    basis: RegressionBasis,
}

impl McEngine {
    pub fn new(bundle: PathBundle, basis: RegressionBasis) -> Self {
        McEngine { bundle, basis }
    }

    pub fn simulate(seed: u64, paths: usize, steps: usize, d: usize, horizon: f64, degree: usize) -> Result<Self> {
        let basis = RegressionBasis::new(d, degree);
        let bundle = PathBundle::simulate(seed, paths, steps, d, horizon, &basis)?;
        Ok(McEngine { bundle, basis })
    }

    pub fn bundle(&self) -> &PathBundle {
        &self.bundle
    }

    pub fn basis(&self) -> &RegressionBasis {
        &self.basis
    }
}

impl Engine for McEngine {
    fn kind(&self) -> EngineKind {
        EngineKind::Mc
    }

    fn dim(&self) -> usize {
        self.bundle.d
    }

    fn steps(&self) -> usize {
        self.bundle.steps
    }

    fn horizon(&self) -> f64 {
        self.bundle.horizon
    }

    fn layer_len(&self, _m: usize) -> usize {
        self.bundle.paths
    }

    fn states(&self, m: usize) -> Cow<'_, [f64]> {
        Cow::Borrowed(self.bundle.layer_states(m))
    }

    fn cond_exp(&self, m: usize, next: &[f64], width: usize) -> Result<Vec<f64>> {
        if m >= self.bundle.steps {
            return Err(Error::invalid(format!("no layer after {m}")));
        }
        regress(&self.bundle, &self.basis, m, next, width)
    }

    fn cond_z(&self, m: usize, next: &[f64], width: usize) -> Result<Vec<f64>> {
        if m >= self.bundle.steps {
            return Err(Error::invalid(format!("no layer after {m}")));
        }
        z_regress(&self.bundle, &self.basis, m, next, width)
    }

    fn cond_exp_z(&self, m: usize, next: &[f64], width: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if m >= self.bundle.steps {
            return Err(Error::invalid(format!("no layer after {m}")));
        }
        let d = self.bundle.d;
        let cols = width * (1 + d);
        let rhs = z_rhs(&self.bundle, m, next, width, true)?;
        let fit = regress(&self.bundle, &self.basis, m, &rhs, cols)?;
        let mut a = Vec::with_capacity(self.bundle.paths * width);
        let mut z = Vec::with_capacity(self.bundle.paths * width * d);
        for row in fit.chunks(cols) {
            a.extend_from_slice(&row[..width]);
            z.extend_from_slice(&row[width..]);
        }
        Ok((a, z))
    }

    fn mean(&self, _m: usize, field: &[f64], width: usize) -> Result<Vec<f64>> {
        if field.len() != self.bundle.paths * width {
            return Err(Error::invalid("field length does not match path count"));
        }
        let mut out = vec![0.0; width];
        for row in field.chunks(width) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.bundle.paths as f64);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(n: usize, d: usize) -> (PathBundle, RegressionBasis) {
        let basis = RegressionBasis::new(d, 3);
        (PathBundle::simulate(11, n, 20, d, 1.0, &basis).unwrap(), basis)
    }

    #[test]
    fn joint_estimate_matches_separate_calls() {
        let (b, basis) = bundle(3_000, 2);
        let values: Vec<f64> = (0..3_000).map(|p| b.state(p, 9, 0).powi(2) - b.state(p, 9, 1)).collect();
        let engine = McEngine::new(b, basis);
        let (a, z) = engine.cond_exp_z(8, &values, 1).unwrap();
        let a2 = engine.cond_exp(8, &values, 1).unwrap();
        let z2 = engine.cond_z(8, &values, 1).unwrap();
        assert!(a.iter().zip(&a2).all(|(x, y)| (x - y).abs() < 1e-10));
        assert!(z.iter().zip(&z2).all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn basis_sizes_and_names() {
        let b = RegressionBasis::new(2, 3);
        assert_eq!(b.size(), 10);
        assert_eq!(b.feature_name(0), "1");
        assert_eq!(RegressionBasis::new(1, 3).feature_name(3), "w0^3");
    }

    #[test]
    fn simulation_is_deterministic_and_consistent() {
        let (a, basis) = bundle(500, 2);
        let b = PathBundle::simulate(11, 500, 20, 2, 1.0, &basis).unwrap();
        assert_eq!(a, b);
        for p in [0, 77, 499] {
            assert_eq!(a.state(p, 0, 1), 0.0);
            assert!((a.state(p, 6, 0) - a.state(p, 5, 0) - a.increment(p, 5, 0)).abs() < 1e-14);
        }
    }

    #[test]
    fn terminal_mean_within_clt_band() {
        let (n, horizon) = (10_000, 1.0);
        let basis = RegressionBasis::new(1, 3);
        let b = PathBundle::simulate(3, n, 50, 1, horizon, &basis).unwrap();
        let mean: f64 = (0..n).map(|p| b.state(p, 50, 0)).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 5.0 * (horizon / n as f64).sqrt());
    }

    #[test]
    fn too_few_paths() {
        let basis = RegressionBasis::new(1, 2);
        assert!(matches!(PathBundle::simulate(0, 3, 5, 1, 1.0, &basis), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn constant_values_fit_exactly() {
        let (b, basis) = bundle(2_000, 1);
        let fit = cond_exp_regress(&b, 7, &vec![9.0; 2_000], &basis).unwrap();
        assert!(fit.iter().all(|v| (v - 9.0).abs() < 1e-10));
    }

    #[test]
    fn measurable_values_are_reproduced() {
        let (b, basis) = bundle(2_000, 1);
        let values: Vec<f64> = (0..2_000).map(|p| b.state(p, 7, 0)).collect();
        let fit = cond_exp_regress(&b, 7, &values, &basis).unwrap();
        for (f, v) in fit.iter().zip(&values) {
            assert!((f - v).abs() < 1e-10);
        }
    }

    #[test]
    fn martingale_increment_is_projected_out() {
        let n = 20_000;
        let (b, basis) = bundle(n, 1);
        let values: Vec<f64> = (0..n).map(|p| b.state(p, 8, 0)).collect();
        let fit = cond_exp_regress(&b, 7, &values, &basis).unwrap();
        let rms = ((0..n).map(|p| (fit[p] - b.state(p, 7, 0)).powi(2)).sum::<f64>() / n as f64).sqrt();
        // O(N^-1/2) relative to the increment size sqrt(dt)
        assert!(rms < 10.0 * (1.0 / 20.0f64).sqrt() / (n as f64).sqrt() * 2.0, "rms {rms}");
    }

    #[test]
    fn z_estimates() {
        let n = 20_000;
        let (b, basis) = bundle(n, 2);
        let dt = b.dt();
        let constant = cond_z_regress(&b, 5, &vec![1.0; n], &basis).unwrap();
        let se = 1.0 / (dt * n as f64).sqrt();
        let rms = (constant.iter().map(|z| z * z).sum::<f64>() / constant.len() as f64).sqrt();
        assert!(rms < 5.0 * se, "rms {rms}, se {se}");
        let coord0: Vec<f64> = (0..n).map(|p| b.state(p, 6, 0)).collect();
        let z = cond_z_regress(&b, 5, &coord0, &basis).unwrap();
        let mean0 = z.chunks(2).map(|c| c[0]).sum::<f64>() / n as f64;
        let mean1 = z.chunks(2).map(|c| c[1]).sum::<f64>() / n as f64;
        assert!((mean0 - 1.0).abs() < 0.05, "{mean0}");
        assert!(mean1.abs() < 0.05, "{mean1}");
    }

    #[test]
    fn projection_ignores_orthogonal_component() {
        let n = 1_000;
        let (b, basis) = bundle(n, 1);
        let m = 4;
        let base: Vec<f64> = (0..n).map(|p| (b.state(p, m + 1, 0)).sin()).collect();
        let fit = cond_exp_regress(&b, m, &base, &basis).unwrap();
        // residual of a least-squares fit is orthogonal to the span
        let residual: Vec<f64> = base.iter().zip(&fit).map(|(v, f)| v - f).collect();
        let shifted: Vec<f64> = base.iter().zip(&residual).map(|(v, r)| v + 3.0 * r).collect();
        let fit2 = cond_exp_regress(&b, m, &shifted, &basis).unwrap();
        for (a, c) in fit.iter().zip(&fit2) {
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_feature_is_named() {
        // a single distinct state value makes every non-constant feature degenerate
        let basis = RegressionBasis::new(1, 2);
        let mut b = PathBundle::simulate(1, 10, 2, 1, 1.0, &basis).unwrap();
        let inc = vec![0.5; 20];
        b = PathBundle::from_increments(b.seed, 10, 2, 1, 1.0, inc);
        let err = cond_exp_regress(&b, 1, &[1.0; 10], &basis).unwrap_err();
        match err {
            Error::Regression { layer: 1, feature } => assert_eq!(feature, "w0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dump_round_trip() {
        let (b, _) = bundle(40, 2);
        let mut buf = Vec::new();
        b.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 40 + 40 * 20 * 2 * 8);
        assert_eq!(PathBundle::read_dump(&buf[..]).unwrap(), b);
    }
}

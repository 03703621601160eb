#![allow(dead_code)]

use rbsde_core::{BarrierSpec, EngineConfig, GeneratorSpec, LinearQuadratic, PenaltySchedule, Scenario, TerminalSpec};

/// Scalar problem on one Brownian motion with `g = clamp(w, -1, 1)`.
pub fn scalar(gamma: f64, barrier: BarrierSpec, steps: usize) -> Scenario {
    let generator = if gamma == 0.0 {
        GeneratorSpec::zero()
    } else {
        GeneratorSpec::LinearQuadratic(LinearQuadratic::quadratic(gamma))
    };
    Scenario {
        n: 1,
        d: 1,
        horizon: 1.0,
        steps,
        generator,
        barrier,
        terminal: TerminalSpec::clamped_affine(vec![0.0], vec![vec![1.0]], 1.0),
        penalty_schedule: PenaltySchedule { k0: 1.0, rho: 2.0, count: 8 },
        engine_config: EngineConfig::default(),
    }
}

/// `h = min(cap, alpha + w)`.
pub fn affine_barrier(alpha: f64, cap: f64) -> BarrierSpec {
    BarrierSpec::clamped_affine(vec![alpha], vec![vec![1.0]], vec![], vec![cap], cap.max(0.0))
}

pub fn inactive_barrier() -> BarrierSpec {
    BarrierSpec::constant(1, -5.0)
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "entry {i}: {x} vs {y} (tol {tol})");
    }
}

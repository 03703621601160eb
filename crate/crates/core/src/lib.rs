//! Numerical construction and verification of multi-dimensional reflected
//! BSDEs with diagonally quadratic drivers, by penalization.
//!
//! The pieces:
//! - [`model`]: scenario data and assumption validators,
//! - [`lattice`] / [`mc`]: conditional-expectation engines,
//! - [`penalized`]: backward induction for a fixed penalty level,
//! - [`reflection`]: the penalty schedule and limit extraction,
//! - [`verify`]: independent oracles and theorem-derived checks.

pub mod engine;
pub mod error;
pub mod lattice;
pub mod mc;
pub mod model;
pub mod penalized;
pub mod reflection;
pub mod verify;

pub use engine::{Engine, EngineKind};
pub use error::{Error, Result};
pub use lattice::Lattice;
pub use mc::{McEngine, PathBundle, RegressionBasis};
pub use model::{
    AssumptionReport, Backend, BarrierSpec, EngineConfig, GeneratorSpec, LinearQuadratic, PenaltySchedule, PicardStart,
    Scenario, TerminalSpec,
};
pub use penalized::{solve_direct_reflected, solve_penalized, DiscreteSolution, SolutionTag};
pub use reflection::{
    run_penalty_schedule, uniqueness_probe, EntryMetrics, PenaltyRun, Perturbation, UniquenessReport,
};
pub use verify::{compare_runs, ComparisonReport, VerificationReport};

/// Builds the engine selected by the scenario's configuration.
pub fn build_engine(scenario: &Scenario) -> Result<Box<dyn Engine + Send>> {
    let cfg = &scenario.engine_config;
    match cfg.backend {
        Backend::Lattice => Ok(Box::new(
            Lattice::build(scenario.d, scenario.horizon, scenario.steps, cfg.node_budget)?.with_grain(cfg.grain),
        )),
        Backend::Mc => Ok(Box::new(McEngine::simulate(
            cfg.seed,
            cfg.paths,
            scenario.steps,
            scenario.d,
            scenario.horizon,
            cfg.basis_degree,
        )?)),
    }
}

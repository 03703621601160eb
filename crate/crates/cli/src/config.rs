use std::path::PathBuf;

use rbsde_core::{Backend, Scenario};

use crate::error::{CliError, Result};
use crate::scenario::load_scenario;

/// Command-line overrides applied on top of the scenario file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub k0: Option<f64>,
    pub kfactor: Option<f64>,
    pub kcount: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub basis_degree: Option<usize>,
    pub node_budget: Option<usize>,
    pub grain: Option<usize>,
    pub tol_limit: Option<f64>,
    pub tol_skorokhod: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) {
        let sched = &mut s.penalty_schedule;
        if let Some(v) = self.k0 {
            sched.k0 = v;
        }
        if let Some(v) = self.kfactor {
            sched.rho = v;
        }
        if let Some(v) = self.kcount {
            sched.count = v;
        }
        if let Some(v) = self.steps {
            s.steps = v;
        }
        let cfg = &mut s.engine_config;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.paths {
            cfg.paths = v;
        }
        if let Some(v) = self.basis_degree {
            cfg.basis_degree = v;
        }
        if let Some(v) = self.node_budget {
            cfg.node_budget = v;
        }
        if let Some(v) = self.grain {
            cfg.grain = v;
        }
        if let Some(v) = self.tol_limit {
            cfg.tol_limit = v;
        }
        if let Some(v) = self.tol_skorokhod {
            cfg.tol_skorokhod = v;
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub engine: Option<Backend>,
    pub overrides: Overrides,
    /// Run the verification checks after the schedule.
    pub verify: bool,
    /// Second scenario expected to dominate the first.
    pub compare_with: Option<PathBuf>,
    /// Write the simulated increments here (mc engine only).
    pub dump_paths: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(scenario: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            scenario: scenario.into(),
            out: out.into(),
            engine: None,
            overrides: Overrides::default(),
            verify: false,
            compare_with: None,
            dump_paths: None,
        }
    }

    /// Loads the scenario file and applies engine selection and overrides.
    pub fn load(&self) -> Result<Scenario> {
        if !self.scenario.is_file() {
            return Err(CliError::Config(format!("scenario file {} does not exist", self.scenario.display())));
        }
        let mut s = load_scenario(&self.scenario)?;
        self.customize(&mut s)?;
        Ok(s)
    }

    pub fn customize(&self, s: &mut Scenario) -> Result<()> {
        if let Some(engine) = self.engine {
            s.engine_config.backend = engine;
        }
        self.overrides.apply(s);
        s.check_structure().map_err(|e| CliError::Config(e.to_string()))?;
        s.ensure_valid()?;
        Ok(())
    }
}

//! Experiment configuration in TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cell::{CellQuery, Tolerances};
use crate::error::{Error, Result};
use crate::evolve::{ConvergenceConfig, EvolutionConfig};
use crate::grid::PeriodicGrid;
use crate::potential::{PotentialKind, PotentialSpec, DEFAULT_RANGE_MAX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Cell,
    Sweep,
    Sensitivity,
    Example1d,
    Asymptotic,
    Evolve,
    Converge,
    Selftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Cell => "cell",
            Command::Sweep => "sweep",
            Command::Sensitivity => "sensitivity",
            Command::Example1d => "example1d",
            Command::Asymptotic => "asymptotic",
            Command::Evolve => "evolve",
            Command::Converge => "converge",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { dim: 1, n: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySection {
    pub p: Vec<f64>,
    pub alpha: f64,
    pub newton_tol: f64,
    pub fixedpoint_tol: f64,
    /// Upper end of the compact density range used for the potential constants.
    pub range_max: f64,
}

impl Default for QuerySection {
    fn default() -> Self {
        let t = Tolerances::default();
        Self {
            p: vec![1.0],
            alpha: 1.0,
            range_max: DEFAULT_RANGE_MAX,
            newton_tol: t.newton_tol,
            fixedpoint_tol: t.fixedpoint_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Magnitudes along `direction`.
    pub p_values: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Defaults to the first axis.
    pub direction: Option<Vec<f64>>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            p_values: vec![0.0, 0.5, 1.0, 2.0, 4.0],
            alphas: vec![0.5, 1.0, 2.0, 4.0],
            direction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExampleSection {
    pub p_min: f64,
    pub p_max: f64,
    pub p_step: f64,
    pub alpha: f64,
}

impl Default for ExampleSection {
    fn default() -> Self {
        Self {
            p_min: 2.0,
            p_max: 16.0,
            p_step: 0.5,
            alpha: 1.0,
        }
    }
}

impl ExampleSection {
    pub fn p_list(&self) -> Result<Vec<f64>> {
        if !(self.p_step > 0.0) || !(self.p_max > self.p_min) {
            return Err(Error::Config("example needs p_step > 0 and p_max > p_min".into()));
        }
        let count = ((self.p_max - self.p_min) / self.p_step + 1e-9).floor() as usize;
        Ok((0..=count).map(|i| self.p_min + self.p_step * i as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsymptoticSection {
    pub p_magnitudes: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl Default for AsymptoticSection {
    fn default() -> Self {
        Self {
            p_magnitudes: vec![10.0, 20.0],
            alphas: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSection {
    pub epsilon: f64,
    pub t_final: f64,
    pub time_steps: usize,
    pub coupling_tol: f64,
    pub max_coupling_iter: usize,
    pub relaxation: f64,
    /// Also run the transform cross-check with this many steps (1-D only).
    pub cole_hopf_steps: Option<usize>,
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self {
            epsilon: 0.125,
            t_final: 1.0,
            time_steps: 256,
            coupling_tol: 1e-10,
            max_coupling_iter: 300,
            relaxation: 0.5,
            cole_hopf_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeSection {
    pub epsilons: Vec<f64>,
    pub step_over_eps: f64,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        Self {
            epsilons: vec![0.125, 0.0625, 0.03125],
            step_over_eps: 1.0 / 64.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub grid: GridSection,
    /// Falls back to a per-command default when absent.
    pub potential: Option<PotentialKind>,
    pub query: QuerySection,
    pub sweep: SweepSection,
    pub example: ExampleSection,
    pub asymptotic: AsymptoticSection,
    pub evolve: EvolveSection,
    pub converge: ConvergeSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: Command::Cell,
            output_dir: PathBuf::from("out"),
            seed: 0,
            grid: GridSection::default(),
            potential: None,
            query: QuerySection::default(),
            sweep: SweepSection::default(),
            example: ExampleSection::default(),
            asymptotic: AsymptoticSection::default(),
            evolve: EvolveSection::default(),
            converge: ConvergeSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical TOML text; parsing it gives back `self`.
    pub fn to_canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn potential(&self) -> Result<PotentialSpec> {
        let kind = match (&self.potential, self.command) {
            (Some(k), _) => k.clone(),
            (None, Command::Example1d) => PotentialSpec::linear_default().kind,
            (None, _) => PotentialSpec::separable_default().kind,
        };
        PotentialSpec::with_range(kind, self.query.range_max).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::new(self.grid.dim, self.grid.n).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            newton_tol: self.query.newton_tol,
            fixedpoint_tol: self.query.fixedpoint_tol,
        }
    }

    pub fn cell_query(&self) -> Result<CellQuery> {
        let grid = self.grid()?;
        let potential = self.potential()?;
        potential
            .validate(grid.dim(), 64)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.query.p.len() != grid.dim() {
            return Err(Error::Config(format!(
                "P has {} components but the grid is {}-dimensional",
                self.query.p.len(),
                grid.dim()
            )));
        }
        let mut q = CellQuery::new(grid, potential, self.query.p.clone(), self.query.alpha);
        q.tolerances = self.tolerances();
        q.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(q)
    }

    /// Unit direction for sweeps, the first axis by default.
    pub fn sweep_direction(&self) -> Result<Vec<f64>> {
        let d = self.grid.dim;
        let dir = self.sweep.direction.clone().unwrap_or_else(|| {
            let mut e = vec![0.0; d];
            e[0] = 1.0;
            e
        });
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if dir.len() != d || !(norm > 0.0) {
            return Err(Error::Config("sweep direction must be a nonzero vector of the grid dimension".into()));
        }
        Ok(dir.iter().map(|x| x / norm).collect())
    }

    pub fn evolution(&self) -> Result<EvolutionConfig> {
        let q = self.cell_query()?;
        let e = &self.evolve;
        let mut c = EvolutionConfig::new(q.grid, q.potential, q.p, e.epsilon);
        c.t_final = e.t_final;
        c.time_steps = e.time_steps;
        c.coupling_tol = e.coupling_tol;
        c.max_coupling_iter = e.max_coupling_iter;
        c.relaxation = e.relaxation;
        c.cell_tolerances = self.tolerances();
        c.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn convergence(&self) -> Result<ConvergenceConfig> {
        let mut base = self.evolution()?;
        let eps = &self.converge.epsilons;
        if eps.len() < 3 {
            return Err(Error::Config("converge needs at least three values of eps".into()));
        }
        for &e in eps {
            base.epsilon = e;
            base.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        let mut c = ConvergenceConfig::new(base, eps.clone());
        c.step_over_eps = self.converge.step_over_eps;
        Ok(c)
    }
}

/// Parses `0.125` or `1/8`.
pub fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let value = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in '{s}'"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in '{s}'"))?;
            a / b
        }
        None => s.parse().map_err(|_| format!("not a number: '{s}'"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("not a finite number: '{s}'"))
    }
}

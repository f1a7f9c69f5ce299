//! Experiment files: TOML with the sections `[model]`, `[solver]`, `[sweep]`
//! and `[output]`. Everything except `model.kernel` has a default, and the
//! fully defaulted description is what gets written next to the artifacts.
//!
//! ```toml
//! [model]
//! kernel = { name = "exponential", alpha = 1.0, a = 1.0 }
//! initial = { kind = "gaussian", mean = 0.0, std = 0.5 }
//!
//! [sweep]
//! lambdas = [5.0, 20.0, 80.0]
//! ```

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::acceleration::OptimizerOptions;
use crate::coupling::KernelSpec;
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::lab::{AccelerationSweep, BoundConstants, ClassicSweep};
use crate::measures::{GridDensity, Layout, ParticleEnsemble, Sampling};
use crate::mfg::{FixedPointMode, PdeConfig, PdeGrid};

const KERNEL_NAMES: [&str; 6] = [
    "zero",
    "exponential",
    "repulsive_attractive",
    "morse",
    "crowd_radial",
    "cucker_smale",
];

/// Initial measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSpec {
    /// Normal density, truncated to the solver grid.
    Gaussian { mean: f64, std: f64 },
    /// Uniform density on `[low, high]`.
    Uniform { low: f64, high: f64 },
    /// Grid density in the `x,value` CSV format, rebinned onto the solver grid.
    GridCsv { path: PathBuf },
    /// Explicit atoms: positions, or `[x.., v..]` for phase-space models.
    Atoms {
        points: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    /// Particle CSV (`x1..,v1..,w`).
    ParticleCsv { path: PathBuf },
    /// `n` phase-space atoms with independent centred normal positions and velocities.
    PhaseGaussian {
        n: usize,
        #[serde(default = "one")]
        dim: usize,
        position_std: f64,
        velocity_std: f64,
    },
}

fn one() -> usize {
    1
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Gaussian {
            mean: 0.0,
            std: 0.5,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

impl InitialSpec {
    /// Density on the solver grid.
    pub fn density(&self, grid: &PdeGrid) -> Result<GridDensity> {
        match self {
            InitialSpec::Gaussian { mean, std } => {
                GridDensity::gaussian(grid.origin, grid.dx, grid.nx, *mean, *std)
            }
            InitialSpec::Uniform { low, high } => {
                GridDensity::from_fn(grid.origin, grid.dx, grid.nx, |x| {
                    if x >= *low && x <= *high {
                        1.0
                    } else {
                        0.0
                    }
                })
            }
            InitialSpec::GridCsv { path } => {
                let g = GridDensity::from_csv(&read(path)?)?;
                if grid.matches(&g) {
                    Ok(g)
                } else {
                    g.rebin(grid.origin, grid.dx, grid.nx)
                }
            }
            other => Err(Error::validation(
                "model.initial.kind",
                format!("{} does not define a grid density", other.kind()),
            )),
        }
    }

    /// `n` position atoms: the given atoms, or a stratified sample of the density.
    pub fn position_atoms(&self, grid: &PdeGrid, n: usize, seed: u64) -> Result<ParticleEnsemble> {
        match self {
            InitialSpec::Atoms { points, weights } => {
                atoms(Layout::Position, points, weights.clone())
            }
            InitialSpec::ParticleCsv { path } => {
                let e = ParticleEnsemble::from_csv(&read(path)?)?;
                if e.layout() != Layout::Position {
                    return Err(Error::validation(
                        "model.initial.path",
                        "expected position atoms",
                    ));
                }
                Ok(e)
            }
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.density(grid)?
                    .sample(n, &mut rng, Sampling::Stratified)
            }
        }
    }

    /// Phase-space atoms for the kinetic and acceleration models.
    pub fn phase_atoms(&self, seed: u64) -> Result<ParticleEnsemble> {
        match self {
            InitialSpec::Atoms { points, weights } => atoms(Layout::Phase, points, weights.clone()),
            InitialSpec::ParticleCsv { path } => {
                let e = ParticleEnsemble::from_csv(&read(path)?)?;
                if e.layout() != Layout::Phase {
                    return Err(Error::validation(
                        "model.initial.path",
                        "expected phase-space atoms",
                    ));
                }
                Ok(e)
            }
            InitialSpec::PhaseGaussian {
                n,
                dim,
                position_std,
                velocity_std,
            } => {
                let px = Normal::new(0.0, *position_std)
                    .map_err(|e| Error::validation("model.initial.position_std", e.to_string()))?;
                let pv = Normal::new(0.0, *velocity_std)
                    .map_err(|e| Error::validation("model.initial.velocity_std", e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut coords = Vec::with_capacity(n * 2 * dim);
                for _ in 0..*n {
                    coords.extend((0..*dim).map(|_| px.sample(&mut rng)));
                    coords.extend((0..*dim).map(|_| pv.sample(&mut rng)));
                }
                ParticleEnsemble::uniform(Layout::Phase, *dim, coords)
            }
            other => Err(Error::validation(
                "model.initial.kind",
                format!("{} does not define phase-space atoms", other.kind()),
            )),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            InitialSpec::Gaussian { .. } => "gaussian",
            InitialSpec::Uniform { .. } => "uniform",
            InitialSpec::GridCsv { .. } => "grid_csv",
            InitialSpec::Atoms { .. } => "atoms",
            InitialSpec::ParticleCsv { .. } => "particle_csv",
            InitialSpec::PhaseGaussian { .. } => "phase_gaussian",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            InitialSpec::Gaussian { mean, std } => {
                if !mean.is_finite() || !(*std > 0.0 && std.is_finite()) {
                    return Err(Error::validation(
                        "model.initial.std",
                        format!("need finite mean and std > 0, got {mean}, {std}"),
                    ));
                }
            }
            InitialSpec::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && high > low) {
                    return Err(Error::validation(
                        "model.initial.high",
                        format!("need low < high, got [{low}, {high}]"),
                    ));
                }
            }
            InitialSpec::Atoms { points, .. } => {
                if points.is_empty()
                    || points
                        .iter()
                        .any(|p| p.len() != points[0].len() || p.is_empty())
                {
                    return Err(Error::validation(
                        "model.initial.points",
                        "need non-empty points of equal length",
                    ));
                }
            }
            InitialSpec::PhaseGaussian { n, dim, .. } => {
                if *n == 0 || *dim == 0 {
                    return Err(Error::validation(
                        "model.initial.n",
                        "need n >= 1 and dim >= 1",
                    ));
                }
            }
            InitialSpec::GridCsv { .. } | InitialSpec::ParticleCsv { .. } => {}
        }
        Ok(())
    }
}

fn atoms(
    layout: Layout,
    points: &[Vec<f64>],
    weights: Option<Vec<f64>>,
) -> Result<ParticleEnsemble> {
    let width = points[0].len();
    let d = match layout {
        Layout::Position => width,
        Layout::Phase if width.is_multiple_of(2) => width / 2,
        Layout::Phase => {
            return Err(Error::validation(
                "model.initial.points",
                "phase-space points need [x.., v..] with an even number of entries",
            ))
        }
    };
    let coords: Vec<f64> = points.iter().flatten().copied().collect();
    match weights {
        Some(w) => ParticleEnsemble::new(layout, d, coords, w),
        None => ParticleEnsemble::uniform(layout, d, coords),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kernel: KernelSpec,
    #[serde(default)]
    pub hamiltonian: HamiltonianSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    /// Discount rate of single solves; sweeps use `sweep.lambdas`.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Viscosity; `lambda^(-1/2)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_lambda() -> f64 {
    20.0
}

fn default_horizon() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub half_width: f64,
    pub nx: usize,
    pub dt: f64,
    pub mode: FixedPointMode,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub auto_switch: bool,
    pub boundary_tolerance: f64,
    /// Step of the finite-volume limit solver.
    pub limit_dt: f64,
    /// Atoms of the particle limit solver.
    pub particles: usize,
    pub particle_dt: f64,
    /// RK4 step of the alignment flow.
    pub cs_dt: f64,
    /// Intervals of the trajectory discretization.
    pub steps: usize,
    pub optimizer: OptimizerOptions,
    pub validation_samples: usize,
    pub psd_points: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let pde = PdeConfig::default();
        Self {
            half_width: pde.half_width,
            nx: pde.nx,
            dt: pde.dt,
            mode: pde.mode,
            max_iterations: pde.max_iterations,
            tolerance: pde.tolerance,
            auto_switch: pde.auto_switch,
            boundary_tolerance: pde.boundary_tolerance,
            limit_dt: 1e-3,
            particles: 2000,
            particle_dt: 1e-2,
            cs_dt: 1e-3,
            steps: 200,
            optimizer: OptimizerOptions::default(),
            validation_samples: 4000,
            psd_points: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Empty means the single value `model.lambda`.
    pub lambdas: Vec<f64>,
    pub window: f64,
    pub samples: usize,
    pub el_tolerance: f64,
    pub energy_slack: f64,
    pub bounds: BoundConstants,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambdas: Vec::new(),
            window: 0.75,
            samples: 12,
            el_tolerance: 1e-4,
            energy_slack: 0.05,
            bounds: BoundConstants::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct OutputConfig {
    /// Time nodes between rows of path CSVs; 0 picks about 20 snapshots.
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Prefixes the field path of validation errors raised by a component.
fn scoped(prefix: &str, e: Error) -> Error {
    match e {
        Error::Validation { field, message } => Error::Validation {
            field: format!("{prefix}.{field}"),
            message,
        },
        other => other,
    }
}

/// Parses and validates an experiment description.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if let Some(name) = raw
        .get("model")
        .and_then(|m| m.get("kernel"))
        .and_then(|k| k.get("name"))
        .and_then(|n| n.as_str())
    {
        if !KERNEL_NAMES.contains(&name) {
            return Err(Error::validation(
                "model.kernel.name",
                format!(
                    "unknown kernel `{name}`; expected one of {}",
                    KERNEL_NAMES.join(", ")
                ),
            ));
        }
    }
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&read(path)?)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(m.lambda > 0.0 && m.lambda.is_finite()) {
            return Err(Error::validation(
                "model.lambda",
                format!("must be > 0, got {}", m.lambda),
            ));
        }
        if let Some(nu) = m.nu {
            if !(nu >= 0.0 && nu.is_finite()) {
                return Err(Error::validation(
                    "model.nu",
                    format!("must be >= 0, got {nu}"),
                ));
            }
        }
        if !(m.horizon > 0.0 && m.horizon.is_finite()) {
            return Err(Error::validation(
                "model.horizon",
                format!("must be > 0, got {}", m.horizon),
            ));
        }
        m.kernel.validate().map_err(|e| scoped("model", e))?;
        m.hamiltonian.validate().map_err(|e| scoped("model", e))?;
        m.initial.validate()?;
        self.pde_config(m.lambda)
            .validate()
            .map_err(|e| scoped("solver", e))?;
        let s = &self.solver;
        for (field, v) in [
            ("solver.limit_dt", s.limit_dt),
            ("solver.particle_dt", s.particle_dt),
            ("solver.cs_dt", s.cs_dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(field, format!("must be > 0, got {v}")));
            }
        }
        for (field, v) in [
            ("solver.particles", s.particles),
            ("solver.steps", s.steps),
            ("solver.psd_points", s.psd_points),
        ] {
            if v == 0 {
                return Err(Error::validation(field, "must be >= 1"));
            }
        }
        if s.validation_samples < 1000 {
            return Err(Error::validation(
                "solver.validation_samples",
                format!("must be >= 1000, got {}", s.validation_samples),
            ));
        }
        let lambdas = self.lambdas();
        if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::validation(
                "sweep.lambdas",
                format!("lambda must be > 0, got {l}"),
            ));
        }
        if lambdas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation(
                "sweep.lambdas",
                "must be strictly increasing",
            ));
        }
        if !(self.sweep.window > 0.0 && self.sweep.window <= 1.0) {
            return Err(Error::validation(
                "sweep.window",
                format!("must lie in (0, 1], got {}", self.sweep.window),
            ));
        }
        if self.sweep.samples == 0 {
            return Err(Error::validation("sweep.samples", "must be >= 1"));
        }
        Ok(())
    }

    /// The fully defaulted description as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Sweep values, falling back to `model.lambda`.
    pub fn lambdas(&self) -> Vec<f64> {
        if self.sweep.lambdas.is_empty() {
            vec![self.model.lambda]
        } else {
            self.sweep.lambdas.clone()
        }
    }

    pub fn pde_config(&self, lambda: f64) -> PdeConfig {
        let s = &self.solver;
        PdeConfig {
            lambda,
            nu: self.model.nu,
            horizon: self.model.horizon,
            half_width: s.half_width,
            nx: s.nx,
            dt: s.dt,
            mode: s.mode,
            max_iterations: s.max_iterations,
            tolerance: s.tolerance,
            auto_switch: s.auto_switch,
            boundary_tolerance: s.boundary_tolerance,
        }
    }

    pub fn classic_sweep(&self) -> ClassicSweep {
        ClassicSweep {
            lambdas: self.lambdas(),
            pde: self.pde_config(self.model.lambda),
            reference_dt: self.solver.limit_dt,
            reference_particles: self.solver.particles,
            reference_particle_dt: self.solver.particle_dt,
            window: self.sweep.window,
            samples: self.sweep.samples,
            seed: self.solver.seed,
            bounds: self.sweep.bounds.clone(),
        }
    }

    pub fn acceleration_sweep(&self) -> AccelerationSweep {
        AccelerationSweep {
            lambdas: self.lambdas(),
            horizon: self.model.horizon,
            steps: self.solver.steps,
            optimizer: self.solver.optimizer.clone(),
            el_tolerance: self.sweep.el_tolerance,
            reference_dt: self.solver.cs_dt,
            window: self.sweep.window,
            samples: self.sweep.samples,
            seed: self.solver.seed,
            energy_slack: self.sweep.energy_slack,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
kernel = { name = "exponential", alpha = 1.0, a = 1.0 }

[sweep]
lambdas = [5.0, 20.0]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.model.lambda, 20.0);
        assert_eq!(cfg.model.horizon, 1.0);
        assert_eq!(cfg.model.initial, InitialSpec::default());
        assert_eq!(cfg.model.hamiltonian, HamiltonianSpec::default());
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(cfg.sweep.window, 0.75);
        assert_eq!(cfg.lambdas(), vec![5.0, 20.0]);
    }

    #[test]
    fn negative_lambda_names_field() {
        let err =
            parse_config("[model]\nlambda = -1.0\nkernel = { name = \"zero\" }\n").unwrap_err();
        match err {
            Error::Validation { field, .. } => assert_eq!(field, "model.lambda"),
            other => panic!("{other}"),
        }
        let err =
            parse_config("[model]\nkernel = { name = \"zero\" }\n[sweep]\nlambdas = [-1.0]\n")
                .unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "sweep.lambdas"));
    }

    #[test]
    fn field_paths_for_other_errors() {
        let field = |text: &str| match parse_config(text).unwrap_err() {
            Error::Validation { field, .. } => field,
            other => panic!("{other}"),
        };
        assert_eq!(
            field("[model]\nnu = -0.1\nkernel = { name = \"zero\" }\n"),
            "model.nu"
        );
        assert_eq!(
            field("[model]\nhorizon = 0.0\nkernel = { name = \"zero\" }\n"),
            "model.horizon"
        );
        assert_eq!(
            field("[model]\nkernel = { name = \"swarm\" }\n"),
            "model.kernel.name"
        );
        assert_eq!(
            field("[model]\nkernel = { name = \"morse\", g = 1.0, l = 2.0 }\n"),
            "model.kernel.g"
        );
        assert_eq!(
            field("[model]\nkernel = { name = \"morse\", g = 0.5, l = 1.0 }\n"),
            "model.kernel.l"
        );
        assert_eq!(
            field("[model]\nkernel = { name = \"zero\" }\n[solver]\nnx = 2\n"),
            "solver.nx"
        );
    }

    #[test]
    fn malformed_text_is_a_parse_error() {
        assert!(matches!(parse_config("[model\n"), Err(Error::Parse(_))));
        assert!(matches!(
            parse_config("[model]\nkernel = { name = \"zero\" }\nbogus = 1\n"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn round_trip_is_identity() {
        let text = r#"
[model]
kernel = { name = "crowd_radial", radii = [0.0, 0.5, 1.0], values = [1.0, 0.4, 0.0] }
hamiltonian = { name = "quadratic_drift", drift = { kind = "sinusoidal", amplitude = 0.3, frequency = 2.0 } }
initial = { kind = "atoms", points = [[0.1], [0.25]], weights = [0.4, 0.6] }
lambda = 12.5
nu = 0.01

[solver]
mode = { kind = "fictitious_play" }
nx = 128
seed = 9

[sweep]
lambdas = [1.0, 2.0, 4.0]
"#;
        let cfg = parse_config(text).unwrap();
        let again = parse_config(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
        let cs = parse_config("[model]\nkernel = { name = \"cucker_smale\", alpha = 1.0, beta = 0.25 }\ninitial = { kind = \"phase_gaussian\", n = 8, position_std = 1.0, velocity_std = 0.5 }\n").unwrap();
        assert_eq!(parse_config(&cs.to_toml().unwrap()).unwrap(), cs);
    }

    #[test]
    fn initial_measures() {
        let cfg = parse_config(MINIMAL).unwrap();
        let grid = cfg.pde_config(20.0).grid();
        let m = cfg.model.initial.density(&grid).unwrap();
        assert!((m.mass() - 1.0).abs() < 1e-12);
        let a = cfg.model.initial.position_atoms(&grid, 100, 1).unwrap();
        assert_eq!(a.len(), 100);
        assert!(cfg.model.initial.phase_atoms(1).is_err());
        let ph = InitialSpec::PhaseGaussian {
            n: 5,
            dim: 2,
            position_std: 1.0,
            velocity_std: 1.0,
        };
        let (p, q) = (ph.phase_atoms(4).unwrap(), ph.phase_atoms(4).unwrap());
        assert_eq!(p, q);
        assert_eq!(p.dim_total(), 4);
        let pair = InitialSpec::Atoms {
            points: vec![vec![0.0, 1.0], vec![0.0, -1.0]],
            weights: None,
        };
        assert_eq!(pair.phase_atoms(0).unwrap().velocity(1).unwrap(), &[-1.0]);
    }
}

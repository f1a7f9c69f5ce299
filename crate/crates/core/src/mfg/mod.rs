//! One-dimensional solver for the discounted MFG system on `[-L, L]`:
//! backward HJB with discount `lambda` and viscosity `nu`, forward
//! Fokker-Planck, and their fixed-point coupling on a finite horizon with
//! `u(T) = 0`.
//!
//! Both equations use homogeneous Neumann conditions; every density is
//! checked to keep its boundary cells below [`PdeConfig::boundary_tolerance`].

mod schemes;

use serde::{Deserialize, Serialize};

pub(crate) use schemes::transport_step;
pub use schemes::{fp_forward, hjb_backward, hjb_backward_source};

use crate::coupling::KernelSpec;
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::measures::{w1_same_grid, GridDensity, GridFunction, MeasurePath};
use crate::numerics::step_count;

/// Fixed-point update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedPointMode {
    /// `m <- (1 - theta) m + theta Phi(m)`.
    DampedPicard { theta: f64 },
    /// `m <- m + (Phi(m) - m) / (j + 2)` at the `j`-th update.
    FictitiousPlay,
}

impl Default for FixedPointMode {
    fn default() -> Self {
        FixedPointMode::DampedPicard { theta: 0.5 }
    }
}

/// Discretization and iteration parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdeConfig {
    pub lambda: f64,
    /// Viscosity; `None` selects `lambda^(-1/2)`.
    pub nu: Option<f64>,
    pub horizon: f64,
    /// The domain is `[-half_width, half_width]`.
    pub half_width: f64,
    pub nx: usize,
    /// Requested time step; the horizon is split into equal steps no larger than this.
    pub dt: f64,
    pub mode: FixedPointMode,
    pub max_iterations: usize,
    /// Stop when `sup_t W1(m_k(t), Phi(m_k)(t))` drops below this.
    pub tolerance: f64,
    /// Switch from damped Picard to fictitious play after two residual increases.
    pub auto_switch: bool,
    pub boundary_tolerance: f64,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            lambda: 20.0,
            nu: None,
            horizon: 1.0,
            half_width: 8.0,
            nx: 256,
            dt: 1e-3,
            mode: FixedPointMode::default(),
            max_iterations: 200,
            tolerance: 1e-6,
            auto_switch: true,
            boundary_tolerance: 1e-8,
        }
    }
}

impl PdeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(
                    field,
                    format!("must be a finite number > 0, got {v}"),
                ))
            }
        };
        positive("lambda", self.lambda)?;
        if let Some(nu) = self.nu {
            if !(nu >= 0.0 && nu.is_finite()) {
                return Err(Error::validation("nu", format!("must be >= 0, got {nu}")));
            }
        }
        positive("horizon", self.horizon)?;
        positive("half_width", self.half_width)?;
        positive("dt", self.dt)?;
        positive("tolerance", self.tolerance)?;
        positive("boundary_tolerance", self.boundary_tolerance)?;
        if self.nx < 4 {
            return Err(Error::validation(
                "nx",
                format!("must be >= 4, got {}", self.nx),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::validation("max_iterations", "must be >= 1"));
        }
        if let FixedPointMode::DampedPicard { theta } = self.mode {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::validation(
                    "theta",
                    format!("must lie in (0, 1], got {theta}"),
                ));
            }
        }
        step_count(self.horizon, self.dt)?;
        Ok(())
    }

    /// Effective viscosity.
    pub fn viscosity(&self) -> f64 {
        self.nu.unwrap_or_else(|| self.lambda.powf(-0.5))
    }

    pub fn grid(&self) -> PdeGrid {
        PdeGrid {
            origin: -self.half_width,
            dx: 2.0 * self.half_width / self.nx as f64,
            nx: self.nx,
        }
    }

    /// Time nodes `0 = t_0 < ... < t_N = T`.
    pub fn times(&self) -> Result<Vec<f64>> {
        let n = step_count(self.horizon, self.dt)?;
        Ok((0..=n)
            .map(|j| self.horizon * j as f64 / n as f64)
            .collect())
    }

    /// Initial density on this configuration's grid.
    pub fn density_from_fn(&self, f: impl Fn(f64) -> f64) -> Result<GridDensity> {
        let g = self.grid();
        GridDensity::from_fn(g.origin, g.dx, g.nx, f)
    }
}

/// Cell-centered uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    pub origin: f64,
    pub dx: f64,
    pub nx: usize,
}

impl PdeGrid {
    pub fn center(&self, i: usize) -> f64 {
        self.origin + (i as f64 + 0.5) * self.dx
    }

    /// Right face of cell `i`.
    pub fn face(&self, i: usize) -> f64 {
        self.origin + (i + 1) as f64 * self.dx
    }

    pub(crate) fn matches(&self, m: &GridDensity) -> bool {
        m.len() == self.nx
            && (m.origin() - self.origin).abs() <= 1e-12 * self.origin.abs().max(1.0)
            && (m.spacing() - self.dx).abs() <= 1e-12 * self.dx
    }

    pub(crate) fn function(&self, values: Vec<f64>) -> GridFunction {
        GridFunction {
            origin: self.origin,
            spacing: self.dx,
            values,
        }
    }
}

/// Discrete convolution with a radial kernel on a uniform grid:
/// `F_i = dx sum_j k(x_i - x_j) m_j` and `DF_i = dx sum_j Dk(x_i - x_j) m_j`.
#[derive(Debug, Clone)]
pub(crate) struct ConvolutionTable {
    values: Vec<f64>,
    slopes: Vec<f64>,
    dx: f64,
}

impl ConvolutionTable {
    pub(crate) fn new(k: &KernelSpec, dx: f64, nx: usize) -> Result<Self> {
        if k.is_phase_space() {
            return Err(Error::Dimension(
                "the grid solvers take position kernels; cucker_smale lives in phase space".into(),
            ));
        }
        let mut values = Vec::with_capacity(nx);
        let mut slopes = Vec::with_capacity(nx);
        for d in 0..nx {
            let (v, s, _) = k.radial3(d as f64 * dx);
            values.push(v);
            slopes.push(if d == 0 { 0.0 } else { s });
        }
        Ok(Self { values, slopes, dx })
    }

    pub(crate) fn coupling(&self, m: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.dx
                * m.iter()
                    .enumerate()
                    .map(|(j, mj)| self.values[i.abs_diff(j)] * mj)
                    .sum::<f64>();
        }
    }

    pub(crate) fn gradient(&self, m: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, mj) in m.iter().enumerate() {
                match i.cmp(&j) {
                    std::cmp::Ordering::Greater => s += self.slopes[i - j] * mj,
                    std::cmp::Ordering::Less => s -= self.slopes[j - i] * mj,
                    std::cmp::Ordering::Equal => {}
                }
            }
            *o = self.dx * s;
        }
    }
}

/// Solution of the coupled system together with iteration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfgSolution {
    pub grid: PdeGrid,
    pub lambda: f64,
    pub nu: f64,
    pub u_path: Vec<GridFunction>,
    pub m_path: MeasurePath<GridDensity>,
    pub iterations: usize,
    /// `sup_t W1(m, Phi(m))` of the returned iterate.
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Iteration at which damped Picard handed over to fictitious play.
    pub switched_at: Option<usize>,
}

/// JSON summary of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfgSummary {
    pub lambda: f64,
    pub nu: f64,
    pub nx: usize,
    pub steps: usize,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub switched_at: Option<usize>,
    pub residual_history: Vec<f64>,
    pub max_abs_u: f64,
    pub max_density: f64,
}

impl MfgSolution {
    pub fn times(&self) -> &[f64] {
        self.m_path.times()
    }

    /// `x,u,m` table at time node `n`.
    pub fn snapshot_csv(&self, n: usize) -> String {
        let u = &self.u_path[n];
        let m = &self.m_path.measures()[n];
        let mut s = String::from("x,u,m\n");
        for i in 0..self.grid.nx {
            s.push_str(&format!(
                "{},{},{}\n",
                self.grid.center(i),
                u.values[i],
                m.values()[i]
            ));
        }
        s
    }

    pub fn summary(&self) -> MfgSummary {
        MfgSummary {
            lambda: self.lambda,
            nu: self.nu,
            nx: self.grid.nx,
            steps: self.m_path.len() - 1,
            iterations: self.iterations,
            residual: self.residual,
            converged: self.converged,
            switched_at: self.switched_at,
            residual_history: self.residual_history.clone(),
            max_abs_u: self.u_path.iter().map(|u| u.max_abs()).fold(0.0, f64::max),
            max_density: self
                .m_path
                .measures()
                .iter()
                .map(|m| m.max_density())
                .fold(0.0, f64::max),
        }
    }
}

/// Residual with the value and density rows of an iterate.
type Candidate = (f64, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Iterates `m -> u = HJB(m) -> Phi(m) = FP(u)` until the self-consistency
/// residual `sup_t W1(m(t), Phi(m)(t))` drops below the tolerance.
///
/// The model is assumed validated. Non-convergence is reported through
/// [`MfgSolution::converged`], returning the iterate with the smallest residual.
pub fn solve_mfg_fixed_point(
    cfg: &PdeConfig,
    h: &HamiltonianSpec,
    k: &KernelSpec,
    m0: &GridDensity,
) -> Result<MfgSolution> {
    cfg.validate()?;
    h.validate()?;
    k.validate()?;
    let grid = cfg.grid();
    if !grid.matches(m0) {
        return Err(Error::Grid(format!(
            "initial density is not on the solver grid (origin {}, dx {}, {} cells)",
            grid.origin, grid.dx, grid.nx
        )));
    }
    let times = cfg.times()?;
    let solver = schemes::Schemes::new(cfg, h, k)?;
    let mut current: Vec<Vec<f64>> = vec![m0.values().to_vec(); times.len()];
    let package = |u: Vec<Vec<f64>>,
                   m: Vec<Vec<f64>>|
     -> Result<(Vec<GridFunction>, MeasurePath<GridDensity>)> {
        let u_path = u.into_iter().map(|v| grid.function(v)).collect();
        let dens = m
            .into_iter()
            .map(|v| GridDensity::from_raw(grid.origin, grid.dx, v))
            .collect();
        Ok((u_path, MeasurePath::new(times.clone(), dens)?))
    };

    if k.is_zero() {
        let u = solver.hjb(&current)?;
        let m = solver.fp(&u, m0.values())?;
        let (u_path, m_path) = package(u, m)?;
        return Ok(MfgSolution {
            grid,
            lambda: cfg.lambda,
            nu: cfg.viscosity(),
            u_path,
            m_path,
            iterations: 1,
            residual: 0.0,
            residual_history: vec![0.0],
            converged: true,
            switched_at: None,
        });
    }

    let mut mode = cfg.mode;
    let mut history = Vec::new();
    let mut best: Option<Candidate> = None;
    let mut increases = 0;
    let mut averaging_step = 0usize;
    let mut switched_at = None;
    let mut converged = false;
    for it in 1..=cfg.max_iterations {
        let u = solver.hjb(&current)?;
        let next = solver.fp(&u, m0.values())?;
        let r = current
            .iter()
            .zip(&next)
            .map(|(a, b)| w1_same_grid(a, b, grid.dx))
            .fold(0.0, f64::max);
        if let Some(prev) = history.last() {
            if r > *prev {
                increases += 1;
            }
        }
        history.push(r);
        if r < cfg.tolerance {
            best = Some((r, u, next));
            converged = true;
            break;
        }
        if cfg.auto_switch && increases >= 2 && matches!(mode, FixedPointMode::DampedPicard { .. })
        {
            mode = FixedPointMode::FictitiousPlay;
            switched_at = Some(it);
        }
        let theta = match mode {
            FixedPointMode::DampedPicard { theta } => theta,
            FixedPointMode::FictitiousPlay => {
                averaging_step += 1;
                1.0 / (averaging_step + 1) as f64
            }
        };
        let blend = |a: &Vec<f64>, b: &Vec<f64>| -> Vec<f64> {
            a.iter()
                .zip(b)
                .map(|(x, y)| (1.0 - theta) * x + theta * y)
                .collect()
        };
        let blended: Vec<Vec<f64>> = current
            .iter()
            .zip(&next)
            .map(|(a, b)| blend(a, b))
            .collect();
        if best.as_ref().is_none_or(|(rb, _, _)| r < *rb) {
            best = Some((r, u, next));
        }
        current = blended;
    }
    let (residual, u, m) = best.expect("at least one iteration ran");
    let (u_path, m_path) = package(u, m)?;
    Ok(MfgSolution {
        grid,
        lambda: cfg.lambda,
        nu: cfg.viscosity(),
        u_path,
        m_path,
        iterations: history.len(),
        residual,
        residual_history: history,
        converged,
        switched_at,
    })
}

#[cfg(test)]
mod tests;

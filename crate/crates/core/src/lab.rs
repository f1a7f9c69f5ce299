//! Lambda sweeps for both families, with bound checks on each solve and a
//! cross-validated reference for the limit.
//!
//! Convergence columns are measured on the window `[0, window T]`
//! (default `3T/4`), away from the terminal layer.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acceleration::{el_residual, minimize_energy, OptimizerOptions};
use crate::aggregation::solve_aggregation_fv;
use crate::aggregation::solve_aggregation_particles;
use crate::coupling::{validate_coupling, KernelSpec, ValidationOptions};
use crate::cucker_smale::solve_cs;
use crate::error::{Error, Result};
use crate::hamiltonian::{validate_hamiltonian, HamiltonianSpec, HamiltonianValidationOptions};
use crate::measures::{
    w1_same_grid, wasserstein1_grid_particles, wasserstein1_particles, Component, GridDensity,
    Moment2, ParticleEnsemble, Sampling, W1Mode, EXACT_PAIR_CAP,
};
use crate::mfg::{solve_mfg_fixed_point, ConvolutionTable, MfgSolution, PdeConfig};

/// Measured value against its limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub measured: f64,
    pub limit: f64,
    pub ok: bool,
}

impl Verdict {
    fn at_most(measured: f64, limit: f64) -> Self {
        Self {
            measured,
            limit,
            ok: measured <= limit,
        }
    }
}

/// Multipliers of the model constant `C0` used by [`diagnostics_bounds`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundConstants {
    /// `lambda |u| / (1 + |x|) <= growth * C0`.
    pub growth: f64,
    /// `lambda |Du| <= gradient * C0`.
    pub gradient: f64,
    /// `lambda D^2 u <= semiconcavity * C0` (one-sided).
    pub semiconcavity: f64,
    /// `|m(t)|_inf <= density * |m0|_inf`.
    pub density: f64,
    /// `|mass - 1|` allowed at every node.
    pub mass: f64,
    /// Support radius (tail mass `1e-8`) at most this fraction of the half width.
    pub support_fraction: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self {
            growth: 4.0,
            gradient: 5.0,
            semiconcavity: 2.0,
            density: 4.0,
            mass: 1e-10,
            support_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub c0: f64,
    pub growth: Verdict,
    pub gradient: Verdict,
    pub semiconcavity: Verdict,
    pub density: Verdict,
    pub mass: Verdict,
    pub support: Verdict,
}

impl BoundReport {
    pub fn all_ok(&self) -> bool {
        [
            self.growth,
            self.gradient,
            self.semiconcavity,
            self.density,
            self.mass,
            self.support,
        ]
        .iter()
        .all(|v| v.ok)
    }
}

/// Scaled a priori quantities of a solved instance, over all time nodes.
pub fn diagnostics_bounds(sol: &MfgSolution, c0: f64, constants: &BoundConstants) -> BoundReport {
    let lambda = sol.lambda;
    let dx = sol.grid.dx;
    let (mut growth, mut gradient, mut semiconcavity): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for u in &sol.u_path {
        let v = &u.values;
        for (i, ui) in v.iter().enumerate() {
            growth = growth.max(lambda * ui.abs() / (1.0 + sol.grid.center(i).abs()));
        }
        for w in v.windows(2) {
            gradient = gradient.max(lambda * (w[1] - w[0]).abs() / dx);
        }
        for w in v.windows(3) {
            semiconcavity = semiconcavity.max(lambda * (w[0] + w[2] - 2.0 * w[1]) / (dx * dx));
        }
    }
    let dens = sol.m_path.measures();
    let m0_max = dens[0].max_density();
    let density = dens.iter().map(|m| m.max_density()).fold(0.0, f64::max);
    let mass = dens
        .iter()
        .map(|m| (m.mass() - 1.0).abs())
        .fold(0.0, f64::max);
    let support = dens
        .iter()
        .map(|m| m.support_radius(1e-8))
        .fold(0.0, f64::max);
    let half_width = 0.5 * sol.grid.dx * sol.grid.nx as f64;
    BoundReport {
        c0,
        growth: Verdict::at_most(growth, constants.growth * c0),
        gradient: Verdict::at_most(gradient, constants.gradient * c0),
        semiconcavity: Verdict::at_most(semiconcavity, constants.semiconcavity * c0),
        density: Verdict::at_most(density, constants.density * m0_max),
        mass: Verdict::at_most(mass, constants.mass),
        support: Verdict::at_most(support, constants.support_fraction * half_width),
    }
}

/// `C0` of a position model: the larger of the sampled coupling constant and
/// the sampled Hamiltonian constant.
pub fn model_constant(h: &HamiltonianSpec, k: &KernelSpec, seed: u64) -> Result<f64> {
    let kc = validate_coupling(
        k,
        &ValidationOptions {
            seed,
            ..Default::default()
        },
    )?;
    let hc = validate_hamiltonian(
        h,
        &HamiltonianValidationOptions {
            seed,
            ..Default::default()
        },
    )?;
    Ok(kc.c0.max(hc.c0))
}

/// Sample times `j * window * T / count`, `j = 1..=count`.
pub fn window_times(horizon: f64, window: f64, count: usize) -> Vec<f64> {
    (1..=count)
        .map(|j| j as f64 * window * horizon / count as f64)
        .collect()
}

/// Moves each time onto the nearest node (nodes are increasing); duplicates are dropped.
fn snap(times: Vec<f64>, nodes: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = times
        .into_iter()
        .map(|t| {
            let k = nodes.partition_point(|s| *s < t).min(nodes.len() - 1);
            if k > 0 && (t - nodes[k - 1]).abs() <= (nodes[k] - t).abs() {
                nodes[k - 1]
            } else {
                nodes[k]
            }
        })
        .collect();
    out.dedup();
    out
}

/// One lambda of a sweep. Family-specific columns are `None` elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    /// `sup_t W1(m_lambda(t), m(t))` over the window.
    pub w1_sup: Option<f64>,
    /// `W1` at `T/2`.
    pub w1_half: Option<f64>,
    /// `sup |lambda u - F(., m_lambda)|` over grid and window.
    pub u_residual: Option<f64>,
    /// `sup_t int |lambda Du - D_x F(., m)| dx` over the window.
    pub du_residual_l1: Option<f64>,
    pub bounds: Option<BoundReport>,
    pub energy: Option<f64>,
    pub energy_bound: Option<f64>,
    pub energy_ok: Option<bool>,
    pub el_residual: Option<f64>,
    pub max_velocity_moment: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: bool,
    /// Set when the solve failed, did not converge or was not certified.
    pub flagged: bool,
    pub error: Option<String>,
    pub wall_clock_s: f64,
}

impl SweepRow {
    fn failed(lambda: f64, err: Error, wall: f64) -> Self {
        Self {
            lambda,
            w1_sup: None,
            w1_half: None,
            u_residual: None,
            du_residual_l1: None,
            bounds: None,
            energy: None,
            energy_bound: None,
            energy_ok: None,
            el_residual: None,
            max_velocity_moment: None,
            iterations: None,
            converged: false,
            flagged: true,
            error: Some(err.to_string()),
            wall_clock_s: wall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub method: String,
    /// Self-check of the reference: FV against particles, or step halving.
    pub cross_validation: String,
    pub cross_validation_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub family: String,
    pub lambdas: Vec<f64>,
    pub c0: f64,
    pub sample_times: Vec<f64>,
    pub reference: ReferenceSummary,
    pub rows: Vec<SweepRow>,
    /// The sweep description exactly as run, seeds included.
    pub config: serde_json::Value,
}

impl ConvergenceReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Same report with wall-clock columns zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.rows.iter_mut().for_each(|row| row.wall_clock_s = 0.0);
        r
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(
            "lambda,w1_sup,w1_half,u_residual,du_residual_l1,bounds_ok,energy,energy_bound,energy_ok,el_residual,\
             max_velocity_moment,iterations,converged,flagged,wall_clock_s\n",
        );
        for r in &self.rows {
            let cols = [
                r.lambda.to_string(),
                opt(r.w1_sup),
                opt(r.w1_half),
                opt(r.u_residual),
                opt(r.du_residual_l1),
                r.bounds
                    .as_ref()
                    .map(|b| b.all_ok().to_string())
                    .unwrap_or_default(),
                opt(r.energy),
                opt(r.energy_bound),
                r.energy_ok.map(|b| b.to_string()).unwrap_or_default(),
                opt(r.el_residual),
                opt(r.max_velocity_moment),
                r.iterations.map(|i| i.to_string()).unwrap_or_default(),
                r.converged.to_string(),
                r.flagged.to_string(),
                r.wall_clock_s.to_string(),
            ];
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        out
    }
}

fn check_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::validation("sweep.lambdas", "empty lambda list"));
    }
    if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(Error::validation(
            "sweep.lambdas",
            format!("lambda must be > 0, got {l}"),
        ));
    }
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::validation(
            "sweep.lambdas",
            "lambda values must be strictly increasing",
        ));
    }
    Ok(())
}

fn check_window(window: f64, samples: usize) -> Result<()> {
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::validation(
            "sweep.window",
            format!("must lie in (0, 1], got {window}"),
        ));
    }
    if samples == 0 {
        return Err(Error::validation(
            "sweep.samples",
            "need at least one sample time",
        ));
    }
    Ok(())
}

/// Classic family: MFG solves against the aggregation limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassicSweep {
    pub lambdas: Vec<f64>,
    /// Grid, horizon and iteration settings; `lambda` is overwritten per row.
    pub pde: PdeConfig,
    /// Step of the finite-volume reference.
    pub reference_dt: f64,
    /// Atoms of the particle cross-check.
    pub reference_particles: usize,
    pub reference_particle_dt: f64,
    pub window: f64,
    pub samples: usize,
    pub seed: u64,
    pub bounds: BoundConstants,
}

impl Default for ClassicSweep {
    fn default() -> Self {
        Self {
            lambdas: vec![5.0, 20.0, 80.0],
            pde: PdeConfig::default(),
            reference_dt: 1e-3,
            reference_particles: 2000,
            reference_particle_dt: 1e-2,
            window: 0.75,
            samples: 12,
            seed: 0,
            bounds: BoundConstants::default(),
        }
    }
}

pub fn run_lambda_sweep_classic(
    h: &HamiltonianSpec,
    k: &KernelSpec,
    m0: &GridDensity,
    sweep: &ClassicSweep,
) -> Result<ConvergenceReport> {
    check_lambdas(&sweep.lambdas)?;
    check_window(sweep.window, sweep.samples)?;
    sweep.pde.validate()?;
    k.validate()?;
    h.validate()?;
    let horizon = sweep.pde.horizon;
    let grid = sweep.pde.grid();
    let c0 = model_constant(h, k, sweep.seed)?;
    let nodes = sweep.pde.times()?;
    let times = snap(window_times(horizon, sweep.window, sweep.samples), &nodes);

    let reference = solve_aggregation_fv(h, k, m0, horizon, sweep.reference_dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sweep.seed);
    let atoms = m0.sample(sweep.reference_particles, &mut rng, Sampling::Stratified)?;
    let particles =
        solve_aggregation_particles(h, k, &atoms, horizon, sweep.reference_particle_dt)?;
    let cross = times
        .iter()
        .map(|&t| wasserstein1_grid_particles(reference.at(t), particles.at(t)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let table = ConvolutionTable::new(k, grid.dx, grid.nx)?;
    let rows: Vec<SweepRow> = sweep
        .lambdas
        .par_iter()
        .map(|&lambda| {
            let clock = Instant::now();
            let cfg = PdeConfig {
                lambda,
                ..sweep.pde.clone()
            };
            let sol = match solve_mfg_fixed_point(&cfg, h, k, m0) {
                Ok(s) => s,
                Err(e) => return SweepRow::failed(lambda, e, clock.elapsed().as_secs_f64()),
            };
            let (mut w1, mut ures, mut dures): (f64, f64, f64) = (0.0, 0.0, 0.0);
            let mut f = vec![0.0; grid.nx];
            let mut df = vec![0.0; grid.nx];
            for &t in &times {
                let n = sol.m_path.nearest_index(t);
                let m_lam = sol.m_path.measures()[n].values();
                let limit = reference.at(t).values();
                w1 = w1.max(w1_same_grid(m_lam, limit, grid.dx));
                let u = &sol.u_path[n].values;
                table.coupling(m_lam, &mut f);
                ures = ures.max(
                    u.iter()
                        .zip(&f)
                        .map(|(a, b)| (lambda * a - b).abs())
                        .fold(0.0, f64::max),
                );
                table.gradient(limit, &mut df);
                let l1: f64 = (0..grid.nx)
                    .map(|i| {
                        let (lo, hi) = (i.saturating_sub(1), (i + 1).min(grid.nx - 1));
                        let du = (u[hi] - u[lo]) / ((hi - lo) as f64 * grid.dx);
                        (lambda * du - df[i]).abs()
                    })
                    .sum::<f64>()
                    * grid.dx;
                dures = dures.max(l1);
            }
            let bounds = diagnostics_bounds(&sol, c0, &sweep.bounds);
            SweepRow {
                lambda,
                w1_sup: Some(w1),
                w1_half: Some(w1_same_grid(
                    sol.m_path.at(0.5 * horizon).values(),
                    reference.at(0.5 * horizon).values(),
                    grid.dx,
                )),
                u_residual: Some(ures),
                du_residual_l1: Some(dures),
                bounds: Some(bounds),
                energy: None,
                energy_bound: None,
                energy_ok: None,
                el_residual: None,
                max_velocity_moment: None,
                iterations: Some(sol.iterations),
                converged: sol.converged,
                flagged: !sol.converged,
                error: None,
                wall_clock_s: clock.elapsed().as_secs_f64(),
            }
        })
        .collect();

    Ok(ConvergenceReport {
        family: "classic".into(),
        lambdas: sweep.lambdas.clone(),
        c0,
        sample_times: times,
        reference: ReferenceSummary {
            method: format!("finite-volume aggregation, dt {}", sweep.reference_dt),
            cross_validation: format!(
                "sup_t W1 against {} stratified particles (seed {}), dt {}",
                sweep.reference_particles, sweep.seed, sweep.reference_particle_dt
            ),
            cross_validation_error: cross,
        },
        rows,
        config: serde_json::json!({
            "hamiltonian": h,
            "kernel": k,
            "initial": m0,
            "sweep": sweep,
        }),
    })
}

/// Acceleration family: energy minimizers against the alignment flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccelerationSweep {
    pub lambdas: Vec<f64>,
    pub horizon: f64,
    pub steps: usize,
    pub optimizer: OptimizerOptions,
    /// Rows whose Euler-Lagrange residual exceeds this are flagged.
    pub el_tolerance: f64,
    /// Step of the alignment-flow reference (checked against half the step).
    pub reference_dt: f64,
    pub window: f64,
    pub samples: usize,
    /// Seed of sliced distances when exact transport is too large.
    pub seed: u64,
    /// Relative slack on the energy bound.
    pub energy_slack: f64,
}

impl Default for AccelerationSweep {
    fn default() -> Self {
        Self {
            lambdas: vec![10.0, 20.0, 40.0],
            horizon: 1.0,
            steps: 200,
            optimizer: OptimizerOptions::default(),
            el_tolerance: 1e-4,
            reference_dt: 1e-3,
            window: 0.75,
            samples: 12,
            seed: 0,
            energy_slack: 0.05,
        }
    }
}

pub fn run_lambda_sweep_acceleration(
    k: &KernelSpec,
    m0: &ParticleEnsemble,
    sweep: &AccelerationSweep,
) -> Result<ConvergenceReport> {
    check_lambdas(&sweep.lambdas)?;
    check_window(sweep.window, sweep.samples)?;
    let c0 = k.cucker_smale_constant().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "acceleration sweep needs the cucker_smale kernel, got {}",
            k.name()
        ))
    })?;
    let horizon = sweep.horizon;
    let mode = if m0.len() * m0.len() <= EXACT_PAIR_CAP {
        W1Mode::Exact
    } else {
        W1Mode::sliced(sweep.seed)
    };
    let align = |dt: f64| solve_cs(m0, k, horizon, dt);
    let reference = align(sweep.reference_dt)?;
    let times = snap(
        window_times(horizon, sweep.window, sweep.samples),
        reference.times(),
    );
    let halved = align(0.5 * sweep.reference_dt)?;
    let cross = times
        .iter()
        .map(|&t| wasserstein1_particles(reference.at(t), halved.at(t), mode))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let m2v = m0.moment2(Component::Velocity)?;

    let rows: Vec<SweepRow> = sweep
        .lambdas
        .par_iter()
        .map(|&lambda| {
            let clock = Instant::now();
            let run = || -> Result<SweepRow> {
                let min = minimize_energy(m0, k, lambda, horizon, sweep.steps, &sweep.optimizer)?;
                let el = el_residual(&min.ensemble, k, lambda)?;
                let mut w1: f64 = 0.0;
                for &t in &times {
                    w1 = w1.max(wasserstein1_particles(
                        &min.ensemble.measure_at(t)?,
                        reference.at(t),
                        mode,
                    )?);
                }
                let mid = reference.times()[reference.nearest_index(0.5 * horizon)];
                let half = wasserstein1_particles(
                    &min.ensemble.measure_at(mid)?,
                    reference.at(mid),
                    mode,
                )?;
                let mut vmax: f64 = 0.0;
                for j in 0..=min.ensemble.steps() {
                    vmax = vmax.max(
                        min.ensemble
                            .measure_at(min.ensemble.time(j))?
                            .moment2(Component::Velocity)?,
                    );
                }
                let bound = 2.0 * c0 / lambda * m2v;
                let certified = min.converged && el <= sweep.el_tolerance;
                Ok(SweepRow {
                    lambda,
                    w1_sup: Some(w1),
                    w1_half: Some(half),
                    u_residual: None,
                    du_residual_l1: None,
                    bounds: None,
                    energy: Some(min.energy.total),
                    energy_bound: Some(bound),
                    energy_ok: Some(min.energy.total <= bound * (1.0 + sweep.energy_slack)),
                    el_residual: Some(el),
                    max_velocity_moment: Some(vmax),
                    iterations: Some(min.iterations),
                    converged: min.converged,
                    flagged: !certified,
                    error: None,
                    wall_clock_s: clock.elapsed().as_secs_f64(),
                })
            };
            run().unwrap_or_else(|e| SweepRow::failed(lambda, e, clock.elapsed().as_secs_f64()))
        })
        .collect();

    Ok(ConvergenceReport {
        family: "acceleration".into(),
        lambdas: sweep.lambdas.clone(),
        c0,
        sample_times: times,
        reference: ReferenceSummary {
            method: format!("alignment flow, RK4 dt {}", sweep.reference_dt),
            cross_validation: "sup_t W1 against the same flow at half the step".into(),
            cross_validation_error: cross,
        },
        rows,
        config: serde_json::json!({
            "kernel": k,
            "initial": m0,
            "sweep": sweep,
        }),
    })
}

#[cfg(test)]
mod tests;

//! Runs one subcommand of an experiment and writes its artifacts.
//!
//! Every run writes `config.resolved.toml` (the fully defaulted description)
//! plus command-specific CSV/JSON files. A solve that finishes without meeting
//! its tolerance still writes everything and then reports
//! [`Error::NotConverged`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::acceleration::{el_residual, minimize_energy};
use crate::aggregation::{outside_hypotheses, solve_aggregation_fv, solve_aggregation_particles};
use crate::config::ExperimentConfig;
use crate::coupling::{psd_check, validate_coupling, ValidationOptions};
use crate::cucker_smale::{flocking_diagnostics, solve_cs};
use crate::error::{Error, Result};
use crate::hamiltonian::{validate_hamiltonian, HamiltonianValidationOptions};
use crate::lab::{
    diagnostics_bounds, model_constant, run_lambda_sweep_acceleration, run_lambda_sweep_classic,
};
use crate::measures::{wasserstein1_grid_particles, Component, Moment2};
use crate::mfg::solve_mfg_fixed_point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    ValidateModel,
    SolveMfg,
    SolveLimit,
    SolveAccel,
    SolveCs,
    SweepClassic,
    SweepAccel,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::ValidateModel => "validate-model",
            Command::SolveMfg => "solve-mfg",
            Command::SolveLimit => "solve-limit",
            Command::SolveAccel => "solve-accel",
            Command::SolveCs => "solve-cs",
            Command::SweepClassic => "sweep-classic",
            Command::SweepAccel => "sweep-accel",
        }
    }
}

/// Files produced by a run, plus the failure to report after writing them.
struct Output {
    files: Vec<(&'static str, String)>,
    failure: Option<Error>,
}

impl Output {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            failure: None,
        }
    }

    fn add(&mut self, name: &'static str, contents: String) {
        self.files.push((name, contents));
    }

    fn json<T: Serialize>(&mut self, name: &'static str, value: &T) -> Result<()> {
        self.add(name, serde_json::to_string_pretty(value)?);
        Ok(())
    }
}

/// Runs `cmd` and writes its artifacts into `out` (created if missing).
/// Returns the paths written.
pub fn dispatch(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut output = Output::new();
    output.add("config.resolved.toml", cfg.to_toml()?);
    run(cmd, cfg, &mut output)?;
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (name, contents) in &output.files {
        let path = out.join(name);
        fs::write(&path, contents)?;
        written.push(path);
    }
    match output.failure {
        Some(e) => Err(e),
        None => Ok(written),
    }
}

/// Machine-readable error document written by the CLI on failure.
pub fn error_json(cmd: Option<Command>, err: &Error) -> String {
    let field = match err {
        Error::Validation { field, .. } => Some(field.clone()),
        _ => None,
    };
    serde_json::to_string_pretty(&json!({
        "command": cmd.map(|c| c.name()),
        "kind": err.kind(),
        "field": field,
        "message": err.to_string(),
    }))
    .expect("error document serializes")
}

fn stride(cfg: &ExperimentConfig, nodes: usize) -> usize {
    match cfg.output.snapshot_every {
        0 => (nodes / 20).max(1),
        s => s,
    }
}

/// Indices `0, s, 2s, ...` plus the last one.
fn snapshots(nodes: usize, s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..nodes).step_by(s).collect();
    if *idx.last().unwrap() != nodes - 1 {
        idx.push(nodes - 1);
    }
    idx
}

fn run(cmd: Command, cfg: &ExperimentConfig, output: &mut Output) -> Result<()> {
    let m = &cfg.model;
    let seed = cfg.solver.seed;
    match cmd {
        Command::ValidateModel => {
            let k = &m.kernel;
            let coupling = validate_coupling(
                k,
                &ValidationOptions {
                    samples: cfg.solver.validation_samples,
                    seed,
                    ..Default::default()
                },
            )?;
            let hamiltonian = if k.is_phase_space() {
                None
            } else {
                Some(validate_hamiltonian(
                    &m.hamiltonian,
                    &HamiltonianValidationOptions {
                        samples: cfg.solver.validation_samples,
                        seed,
                        ..Default::default()
                    },
                )?)
            };
            let psd = psd_check(k, cfg.solver.psd_points.max(2), seed)?;
            let pass = coupling.all_ok() && hamiltonian.as_ref().is_none_or(|h| h.convex_ok);
            let c0 = coupling.c0.max(hamiltonian.as_ref().map_or(1.0, |h| h.c0));
            output.json(
                "validation.json",
                &json!({
                    "pass": pass,
                    "c0": c0,
                    "coupling": coupling,
                    "hamiltonian": hamiltonian,
                    "psd": psd,
                    "limit_note": outside_hypotheses(k),
                }),
            )?;
            if !pass {
                output.failure = Some(Error::validation(
                    "model.kernel",
                    "assumption checks failed; see validation.json",
                ));
            }
        }
        Command::SolveMfg => {
            let pde = cfg.pde_config(m.lambda);
            let m0 = m.initial.density(&pde.grid())?;
            let sol = solve_mfg_fixed_point(&pde, &m.hamiltonian, &m.kernel, &m0)?;
            let c0 = model_constant(&m.hamiltonian, &m.kernel, seed)?;
            let bounds = diagnostics_bounds(&sol, c0, &cfg.sweep.bounds);
            output.json(
                "summary.json",
                &json!({ "solve": sol.summary(), "bounds": bounds }),
            )?;
            let mut csv = String::from("t,x,u,m\n");
            for n in snapshots(sol.times().len(), stride(cfg, sol.times().len())) {
                let t = sol.times()[n];
                let (u, dens) = (&sol.u_path[n].values, sol.m_path.measures()[n].values());
                for i in 0..sol.grid.nx {
                    csv.push_str(&format!(
                        "{t},{},{},{}\n",
                        sol.grid.center(i),
                        u[i],
                        dens[i]
                    ));
                }
            }
            output.add("mfg_path.csv", csv);
            if !sol.converged {
                output.failure = Some(Error::NotConverged {
                    what: "fixed point".into(),
                    residual: sol.residual,
                    tolerance: pde.tolerance,
                });
            }
        }
        Command::SolveLimit => {
            let grid = cfg.pde_config(m.lambda).grid();
            let m0 = m.initial.density(&grid)?;
            let fv = solve_aggregation_fv(
                &m.hamiltonian,
                &m.kernel,
                &m0,
                m.horizon,
                cfg.solver.limit_dt,
            )?;
            let atoms = m
                .initial
                .position_atoms(&grid, cfg.solver.particles, seed)?;
            let particles = solve_aggregation_particles(
                &m.hamiltonian,
                &m.kernel,
                &atoms,
                m.horizon,
                cfg.solver.particle_dt,
            )?;
            let mut csv = String::from("t,x,m\n");
            for n in snapshots(fv.len(), stride(cfg, fv.len())) {
                let (t, d) = (fv.times()[n], &fv.measures()[n]);
                for i in 0..d.len() {
                    csv.push_str(&format!("{t},{},{}\n", d.center(i), d.values()[i]));
                }
            }
            output.add("limit_fv.csv", csv);
            let mut csv = String::from("t,atom,x1,w\n");
            for n in snapshots(particles.len(), stride(cfg, particles.len())) {
                let (t, e) = (particles.times()[n], &particles.measures()[n]);
                for i in 0..e.len() {
                    csv.push_str(&format!("{t},{i},{},{}\n", e.point(i)[0], e.weights()[i]));
                }
            }
            output.add("limit_particles.csv", csv);
            let cross = wasserstein1_grid_particles(fv.final_measure(), particles.final_measure())?;
            output.json(
                "summary.json",
                &json!({
                    "fv_nodes": fv.len(),
                    "particles": atoms.len(),
                    "final_w1_fv_vs_particles": cross,
                    "final_mass": fv.final_measure().mass(),
                    "limit_note": outside_hypotheses(&m.kernel),
                }),
            )?;
        }
        Command::SolveCs => {
            let m0 = m.initial.phase_atoms(seed)?;
            let path = solve_cs(&m0, &m.kernel, m.horizon, cfg.solver.cs_dt)?;
            let d = m0.spatial_dim();
            let mut cols = vec!["atom".to_string(), "t".to_string()];
            cols.extend((1..=d).map(|c| format!("x{c}")));
            cols.extend((1..=d).map(|c| format!("v{c}")));
            let mut csv = cols.join(",") + "\n";
            for n in snapshots(path.len(), stride(cfg, path.len())) {
                let (t, e) = (path.times()[n], &path.measures()[n]);
                for i in 0..e.len() {
                    let row: Vec<String> = e.point(i).iter().map(f64::to_string).collect();
                    csv.push_str(&format!("{i},{t},{}\n", row.join(",")));
                }
            }
            output.add("cs_path.csv", csv);
            output.json("summary.json", &flocking_diagnostics(&path)?)?;
        }
        Command::SolveAccel => {
            let m0 = m.initial.phase_atoms(seed)?;
            let min = minimize_energy(
                &m0,
                &m.kernel,
                m.lambda,
                m.horizon,
                cfg.solver.steps,
                &cfg.solver.optimizer,
            )?;
            let el = el_residual(&min.ensemble, &m.kernel, m.lambda)?;
            let c0 = m.kernel.cucker_smale_constant().unwrap_or(1.0);
            let bound = 2.0 * c0 / m.lambda * m0.moment2(Component::Velocity)?;
            output.add("trajectories.csv", min.ensemble.to_csv());
            output.json(
                "energy.json",
                &json!({
                    "lambda": m.lambda,
                    "energy": min.energy,
                    "energy_bound": bound,
                    "el_residual": el,
                    "converged": min.converged,
                    "gradient_norm": min.gradient_norm,
                    "iterations": min.iterations,
                }),
            )?;
            if !min.converged {
                output.failure = Some(Error::NotConverged {
                    what: "energy minimization".into(),
                    residual: min.gradient_norm,
                    tolerance: cfg.solver.optimizer.tolerance,
                });
            }
        }
        Command::SweepClassic => {
            let sweep = cfg.classic_sweep();
            let m0 = m.initial.density(&sweep.pde.grid())?;
            let report = run_lambda_sweep_classic(&m.hamiltonian, &m.kernel, &m0, &sweep)?;
            output.add("report.json", report.to_json()?);
            output.add("report.csv", report.to_csv());
        }
        Command::SweepAccel => {
            let m0 = m.initial.phase_atoms(seed)?;
            let report = run_lambda_sweep_acceleration(&m.kernel, &m0, &cfg.acceleration_sweep())?;
            output.add("report.json", report.to_json()?);
            output.add("report.csv", report.to_csv());
        }
    }
    Ok(())
}

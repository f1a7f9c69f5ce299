//! Solvers for the limit equation `m_t + div(m (v - Dk * m)) = 0`: an RK4
//! particle method and a conservative upwind finite-volume scheme.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{grad_coupling, kernel_grad_raw, KernelSpec, MeasureRef};
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::measures::{GridDensity, Layout, MeasurePath, ParticleEnsemble};
use crate::mfg::transport_step;
use crate::numerics::{rk4_step, step_count};

/// Limit drift `-D_pH(D_x F(x, m), x) = v(x) - (Dk * m)(x)`.
pub fn limit_drift<'a>(
    h: &HamiltonianSpec,
    k: &KernelSpec,
    x: &[f64],
    m: impl Into<MeasureRef<'a>>,
) -> Result<Vec<f64>> {
    if k.is_phase_space() {
        return Err(Error::Dimension(
            "the limit drift takes a position kernel".into(),
        ));
    }
    if h.drift().dim().is_some_and(|d| d != x.len()) {
        return Err(Error::Dimension(format!(
            "drift dimension does not match the {}-dimensional query",
            x.len()
        )));
    }
    let g = grad_coupling(k, x, None, m)?;
    Ok(h.drift()
        .eval(x)
        .iter()
        .zip(&g.dx)
        .map(|(v, d)| v - d)
        .collect())
}

/// Why a kernel falls outside the convergence hypotheses, if it does.
pub fn outside_hypotheses(k: &KernelSpec) -> Option<&'static str> {
    match *k {
        KernelSpec::Exponential { alpha, .. } if alpha < 0.0 => {
            Some("attractive exponential kernel is not semiconcave; solutions may concentrate in finite time")
        }
        KernelSpec::CuckerSmale { .. } => Some("phase-space kernel has no position-space limit equation"),
        _ => None,
    }
}

/// Recording and safety controls for the limit solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationOptions {
    /// Keep every `record_every`-th time node (the final node is always kept).
    pub record_every: usize,
    /// Particles beyond this radius abort the run; default `10 (1 + max |x_0|)`.
    pub escape_radius: Option<f64>,
    /// Largest mass allowed in the outer grid cells.
    pub boundary_tolerance: f64,
    /// Largest admissible `max |b| dt / dx`.
    pub cfl_limit: f64,
}

impl Default for AggregationOptions {
    fn default() -> Self {
        Self {
            record_every: 1,
            escape_radius: None,
            boundary_tolerance: 1e-8,
            cfl_limit: 0.9,
        }
    }
}

/// `phi'(r) = sum c r^p exp(-b r)` for the exponential family of profiles.
fn exponential_terms(k: &KernelSpec) -> Option<Vec<(f64, u8, f64)>> {
    match *k {
        KernelSpec::Zero => Some(vec![]),
        KernelSpec::Exponential { alpha, a } => Some(vec![(-a * alpha, 0, a)]),
        KernelSpec::RepulsiveAttractive { a } => Some(vec![(-1.0, 0, a), (a, 1, a)]),
        KernelSpec::Morse { g, l } => Some(vec![(-1.0, 0, 1.0), (g / l, 0, 1.0 / l)]),
        _ => None,
    }
}

/// `sum_j w_j Dk(x_i - x_j)` on the line for exponential-family kernels, by
/// two sweeps over the sorted atoms. Coincident atoms do not interact.
fn interaction_sorted(terms: &[(f64, u8, f64)], x: &[f64], w: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut out = vec![0.0; n];
    for &(c, p, b) in terms {
        // Left sweep: atoms strictly to the left push with sign +1.
        sweep(
            &order,
            x,
            w,
            b,
            |idx, s0, s1| {
                out[idx] += c * if p == 0 { s0 } else { s1 };
            },
            false,
        );
        sweep(
            &order,
            x,
            w,
            b,
            |idx, s0, s1| {
                out[idx] -= c * if p == 0 { s0 } else { s1 };
            },
            true,
        );
    }
    out
}

/// Walks the sorted atoms in one direction, reporting for each atom
/// `s0 = sum w_j e^{-b r_j}` and `s1 = sum w_j r_j e^{-b r_j}` over atoms
/// strictly behind it (`r_j` the distance).
fn sweep(
    order: &[usize],
    x: &[f64],
    w: &[f64],
    b: f64,
    mut emit: impl FnMut(usize, f64, f64),
    reverse: bool,
) {
    let seq: Vec<usize> = if reverse {
        order.iter().rev().copied().collect()
    } else {
        order.to_vec()
    };
    let (mut s0, mut s1) = (0.0, 0.0);
    let mut k = 0;
    let mut prev: Option<f64> = None;
    let mut pending = 0.0;
    while k < seq.len() {
        let y = x[seq[k]];
        if let Some(py) = prev {
            s0 += pending;
            let delta = (y - py).abs();
            let e = (-b * delta).exp();
            s1 = e * (s1 + delta * s0);
            s0 *= e;
        }
        let mut end = k;
        pending = 0.0;
        while end < seq.len() && x[seq[end]] == y {
            emit(seq[end], s0, s1);
            pending += w[seq[end]];
            end += 1;
        }
        prev = Some(y);
        k = end;
    }
}

/// `sum_j w_j Dk(x_i - x_j)` for every atom of a position ensemble.
pub(crate) fn interaction_forces(k: &KernelSpec, coords: &[f64], w: &[f64], d: usize) -> Vec<f64> {
    if d == 1 {
        if let Some(terms) = exponential_terms(k) {
            return interaction_sorted(&terms, coords, w);
        }
    }
    let n = w.len();
    (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = &coords[i * d..(i + 1) * d];
            let mut acc = vec![0.0; d];
            let mut diff = vec![0.0; d];
            for j in 0..n {
                if j == i {
                    continue;
                }
                for ((o, a), b) in diff.iter_mut().zip(xi).zip(&coords[j * d..(j + 1) * d]) {
                    *o = a - b;
                }
                kernel_grad_raw(k, &diff, &[], w[j], &mut acc, &mut []);
            }
            acc
        })
        .collect()
}

/// RK4 integration of `x_i' = v(x_i) - sum_j w_j Dk(x_i - x_j)`.
pub fn solve_aggregation_particles(
    h: &HamiltonianSpec,
    k: &KernelSpec,
    m0: &ParticleEnsemble,
    horizon: f64,
    dt: f64,
) -> Result<MeasurePath<ParticleEnsemble>> {
    solve_aggregation_particles_with(h, k, m0, horizon, dt, &AggregationOptions::default())
}

pub fn solve_aggregation_particles_with(
    h: &HamiltonianSpec,
    k: &KernelSpec,
    m0: &ParticleEnsemble,
    horizon: f64,
    dt: f64,
    opts: &AggregationOptions,
) -> Result<MeasurePath<ParticleEnsemble>> {
    k.validate()?;
    h.validate()?;
    if k.is_phase_space() || m0.layout() != Layout::Position {
        return Err(Error::Dimension(
            "the limit equation runs on position ensembles with a position kernel".into(),
        ));
    }
    let d = m0.spatial_dim();
    if h.drift().dim().is_some_and(|dd| dd != d) {
        return Err(Error::Dimension(format!(
            "drift dimension does not match {d}"
        )));
    }
    let steps = step_count(horizon, dt)?;
    let dt = horizon / steps as f64;
    let stride = opts.record_every.max(1);
    let escape = opts
        .escape_radius
        .unwrap_or_else(|| 10.0 * (1.0 + m0.coords().iter().fold(0.0f64, |a, c| a.max(c.abs()))));
    let w = m0.weights().to_vec();
    let drift = h.drift();
    let mut rhs = |y: &[f64]| -> Result<Vec<f64>> {
        let f = interaction_forces(k, y, &w, d);
        Ok(y.chunks(d)
            .zip(f.chunks(d))
            .flat_map(|(x, fi)| {
                drift
                    .eval(x)
                    .into_iter()
                    .zip(fi)
                    .map(|(v, g)| v - g)
                    .collect::<Vec<_>>()
            })
            .collect())
    };
    let mut y = m0.coords().to_vec();
    let mut times = vec![0.0];
    let mut path = vec![m0.clone()];
    for n in 1..=steps {
        y = rk4_step(&y, dt, &mut rhs)?;
        let worst = y.iter().fold(0.0f64, |a, c| {
            if c.is_finite() {
                a.max(c.abs())
            } else {
                f64::INFINITY
            }
        });
        if worst > escape {
            return Err(Error::Divergence {
                kernel: k.name().into(),
                detail: format!(
                    "a particle reached |x| = {worst:.3e} > {escape:.3e} at t = {:.4}",
                    n as f64 * dt
                ),
            });
        }
        if n % stride == 0 || n == steps {
            times.push(horizon * n as f64 / steps as f64);
            path.push(m0.with_coords(y.clone())?);
        }
    }
    MeasurePath::new(times, path)
}

/// Drift `v - Dk * m` at the interior faces of a grid density.
pub(crate) struct FaceDrift {
    v_face: Vec<f64>,
    half_slopes: Vec<f64>,
    dx: f64,
}

impl FaceDrift {
    pub(crate) fn new(
        h: &HamiltonianSpec,
        k: &KernelSpec,
        origin: f64,
        dx: f64,
        nx: usize,
    ) -> Self {
        let drift = h.drift();
        Self {
            v_face: (0..nx - 1)
                .map(|i| drift.eval_1d(origin + (i + 1) as f64 * dx))
                .collect(),
            half_slopes: (0..nx)
                .map(|q| k.radial3((q as f64 + 0.5) * dx).1)
                .collect(),
            dx,
        }
    }

    pub(crate) fn eval(&self, m: &[f64], out: &mut [f64]) {
        let hs = &self.half_slopes;
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, mj) in m.iter().enumerate() {
                if *mj == 0.0 {
                    continue;
                }
                s += if i >= j { hs[i - j] } else { -hs[j - i - 1] } * mj;
            }
            *o = self.v_face[i] - self.dx * s;
        }
    }
}

/// Conservative upwind finite volumes with the drift recomputed from the
/// current density at every step.
pub fn solve_aggregation_fv(
    h: &HamiltonianSpec,
    k: &KernelSpec,
    m0: &GridDensity,
    horizon: f64,
    dt: f64,
) -> Result<MeasurePath<GridDensity>> {
    solve_aggregation_fv_with(h, k, m0, horizon, dt, &AggregationOptions::default())
}

pub fn solve_aggregation_fv_with(
    h: &HamiltonianSpec,
    k: &KernelSpec,
    m0: &GridDensity,
    horizon: f64,
    dt: f64,
    opts: &AggregationOptions,
) -> Result<MeasurePath<GridDensity>> {
    k.validate()?;
    h.validate()?;
    if k.is_phase_space() {
        return Err(Error::Dimension(
            "the finite-volume solver takes a position kernel".into(),
        ));
    }
    if h.drift().dim().is_some_and(|d| d != 1) {
        return Err(Error::Dimension(
            "the finite-volume solver needs a one-dimensional drift".into(),
        ));
    }
    let nx = m0.len();
    if nx < 2 {
        return Err(Error::Grid("need at least two cells".into()));
    }
    let steps = step_count(horizon, dt)?;
    let dt = horizon / steps as f64;
    let dx = m0.spacing();
    let stride = opts.record_every.max(1);
    let faces = FaceDrift::new(h, k, m0.origin(), dx, nx);
    let mut speed = vec![0.0; nx - 1];
    let mut m = m0.values().to_vec();
    let mut times = vec![0.0];
    let mut path = vec![m0.clone()];
    let check_boundary = |m: &[f64]| -> Result<()> {
        let b = (m[0] + m[nx - 1]) * dx;
        if b > opts.boundary_tolerance {
            return Err(Error::DomainTooSmall {
                boundary_mass: b,
                tolerance: opts.boundary_tolerance,
            });
        }
        Ok(())
    };
    check_boundary(&m)?;
    for n in 1..=steps {
        faces.eval(&m, &mut speed);
        let cfl = speed.iter().fold(0.0f64, |a, s| a.max(s.abs())) * dt / dx;
        if !(cfl <= opts.cfl_limit) {
            return Err(Error::Stability {
                bound: "aggregation cfl: max |v - Dk * m| dt / dx <= 0.9",
                measured: cfl,
                limit: opts.cfl_limit,
            });
        }
        m = transport_step(&m, &speed, dt, dx)?;
        check_boundary(&m)?;
        if n % stride == 0 || n == steps {
            times.push(horizon * n as f64 / steps as f64);
            path.push(GridDensity::from_raw(m0.origin(), dx, m.clone()));
        }
    }
    MeasurePath::new(times, path)
}

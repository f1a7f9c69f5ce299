//! Variational MFG of acceleration, discretized as an ensemble of trajectories
//! driven by piecewise-constant accelerations.
//!
//! The discrete energy is
//!
//! `J = sum_i w_i sum_j c_j |a_ij|^2 / (2 lambda) + sum_n omega_n e^{-lambda t_n} F(m_n)`
//!
//! where `c_j` integrates `e^{-lambda t}` exactly over interval `j`, `omega_n`
//! are trapezoid weights and `F(m) = 1/2 sum_i sum_l w_i w_l k(z_i - z_l)`.
//!
//! The optimizer works with the gradient rescaled by the diagonal of the
//! control Hessian, `r = P^{-1} grad J` with `P_ij = w_i c_j / lambda`, so its
//! entries have units of acceleration at every time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{kernel_grad_raw, kernel_raw, KernelSpec};
use crate::error::{Error, Result};
use crate::measures::{Layout, ParticleEnsemble};
use crate::numerics::gmres;

/// `N` trajectories on the uniform grid `t_j = j T / K`. Positions and
/// velocities are always rebuilt from the initial states and the controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    dim: usize,
    horizon: f64,
    steps: usize,
    weights: Vec<f64>,
    /// Per trajectory `[x_1..x_d, v_1..v_d]` at `t = 0`.
    initial: Vec<f64>,
    /// Layout `[trajectory][interval][component]`.
    controls: Vec<f64>,
}

/// Positions and velocities at every node, layout `[trajectory][node][component]`.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl TrajectoryEnsemble {
    /// Free flight (`a = 0`) from the atoms of a phase-space measure.
    pub fn free_flight(m0: &ParticleEnsemble, horizon: f64, steps: usize) -> Result<Self> {
        if m0.layout() != Layout::Phase {
            return Err(Error::Dimension(
                "trajectories start from a phase-space measure".into(),
            ));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::validation(
                "horizon",
                format!("must be positive, got {horizon}"),
            ));
        }
        if steps == 0 {
            return Err(Error::validation("steps", "need at least one interval"));
        }
        let dim = m0.spatial_dim();
        let vars = steps * m0.len() * dim;
        if vars > 1_000_000 {
            return Err(Error::InvalidArgument(format!(
                "{vars} control variables exceed the limit of 1e6"
            )));
        }
        Ok(Self {
            dim,
            horizon,
            steps,
            weights: m0.weights().to_vec(),
            initial: m0.coords().to_vec(),
            controls: vec![0.0; vars],
        })
    }

    /// Same initial data with new controls.
    pub fn with_controls(&self, controls: Vec<f64>) -> Result<Self> {
        if controls.len() != self.controls.len() {
            return Err(Error::Dimension(format!(
                "expected {} control values, got {}",
                self.controls.len(),
                controls.len()
            )));
        }
        if controls.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite control".into()));
        }
        Ok(Self {
            controls,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    /// Acceleration of trajectory `i` on interval `j`.
    pub fn control(&self, i: usize, j: usize) -> &[f64] {
        let at = (i * self.steps + j) * self.dim;
        &self.controls[at..at + self.dim]
    }

    /// Initial measure `(gamma(0), gamma'(0))`.
    pub fn initial_measure(&self) -> Result<ParticleEnsemble> {
        ParticleEnsemble::new(
            Layout::Phase,
            self.dim,
            self.initial.clone(),
            self.weights.clone(),
        )
    }

    pub fn rollout(&self) -> Rollout {
        let (n, k, d, dt) = (self.len(), self.steps, self.dim, self.dt());
        let mut positions = vec![0.0; n * (k + 1) * d];
        let mut velocities = vec![0.0; n * (k + 1) * d];
        for i in 0..n {
            let z0 = &self.initial[i * 2 * d..(i + 1) * 2 * d];
            let base = i * (k + 1) * d;
            positions[base..base + d].copy_from_slice(&z0[..d]);
            velocities[base..base + d].copy_from_slice(&z0[d..]);
            for j in 0..k {
                let a = self.control(i, j);
                for c in 0..d {
                    let (x, v) = (positions[base + j * d + c], velocities[base + j * d + c]);
                    positions[base + (j + 1) * d + c] = x + dt * v + 0.5 * dt * dt * a[c];
                    velocities[base + (j + 1) * d + c] = v + dt * a[c];
                }
            }
        }
        Rollout {
            positions,
            velocities,
        }
    }

    /// `m^eta(t)`: the state of every trajectory at time `t`, using the exact
    /// kinematics inside the interval containing `t`.
    pub fn measure_at(&self, t: f64) -> Result<ParticleEnsemble> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        let (k, d, dt) = (self.steps, self.dim, self.dt());
        let j = ((t / dt).floor() as usize).min(k - 1);
        let tau = t - self.time(j);
        let roll = self.rollout();
        let mut coords = Vec::with_capacity(self.len() * 2 * d);
        for i in 0..self.len() {
            let at = (i * (k + 1) + j) * d;
            let a = self.control(i, j);
            let (x, v) = (&roll.positions[at..at + d], &roll.velocities[at..at + d]);
            coords.extend((0..d).map(|c| x[c] + tau * v[c] + 0.5 * tau * tau * a[c]));
            coords.extend((0..d).map(|c| v[c] + tau * a[c]));
        }
        ParticleEnsemble::new(Layout::Phase, d, coords, self.weights.clone())
    }

    /// Columns `trajectory,t,x1..,v1..,a1..`; the acceleration on a node row is
    /// the control of the interval starting there (the last interval's at `T`).
    pub fn to_csv(&self) -> String {
        let (k, d) = (self.steps, self.dim);
        let mut cols = vec!["trajectory".to_string(), "t".to_string()];
        for p in ["x", "v", "a"] {
            cols.extend((1..=d).map(|c| format!("{p}{c}")));
        }
        let mut out = cols.join(",");
        out.push('\n');
        let roll = self.rollout();
        for i in 0..self.len() {
            for j in 0..=k {
                let at = (i * (k + 1) + j) * d;
                let mut row = vec![i.to_string(), self.time(j).to_string()];
                row.extend(roll.positions[at..at + d].iter().map(f64::to_string));
                row.extend(roll.velocities[at..at + d].iter().map(f64::to_string));
                row.extend(self.control(i, j.min(k - 1)).iter().map(f64::to_string));
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub control: f64,
    pub interaction: f64,
    pub total: f64,
}

fn check_kernel(k: &KernelSpec) -> Result<()> {
    k.validate()?;
    match k {
        KernelSpec::CuckerSmale { .. } | KernelSpec::Zero => Ok(()),
        other => Err(Error::InvalidArgument(format!(
            "acceleration energy needs a phase-space kernel, got {}",
            other.name()
        ))),
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(
            "lambda",
            format!("must be positive, got {lambda}"),
        ))
    }
}

/// Interaction data at one node: `F(m_n)` and the per-atom derivatives
/// `D_x F(z_i, m_n)`, `D_v F(z_i, m_n)`.
struct NodeField {
    energy: f64,
    dx: Vec<f64>,
    dv: Vec<f64>,
}

fn node_fields(
    e: &TrajectoryEnsemble,
    roll: &Rollout,
    k: &KernelSpec,
    grads: bool,
) -> Vec<NodeField> {
    let (n, steps, d) = (e.len(), e.steps, e.dim);
    let w = &e.weights;
    (0..=steps)
        .into_par_iter()
        .map(|j| {
            let pos = |i: usize| &roll.positions[(i * (steps + 1) + j) * d..][..d];
            let vel = |i: usize| &roll.velocities[(i * (steps + 1) + j) * d..][..d];
            let mut field = NodeField {
                energy: 0.0,
                dx: vec![0.0; if grads { n * d } else { 0 }],
                dv: vec![0.0; if grads { n * d } else { 0 }],
            };
            if k.is_zero() {
                return field;
            }
            let mut zx = vec![0.0; d];
            let mut zv = vec![0.0; d];
            for i in 0..n {
                let mut fi = 0.0;
                for l in 0..n {
                    if l == i {
                        continue;
                    }
                    for c in 0..d {
                        zx[c] = pos(i)[c] - pos(l)[c];
                        zv[c] = vel(i)[c] - vel(l)[c];
                    }
                    fi += w[l] * kernel_raw(k, &zx, &zv);
                    if grads {
                        let (gx, gv) = (
                            &mut field.dx[i * d..(i + 1) * d],
                            &mut field.dv[i * d..(i + 1) * d],
                        );
                        kernel_grad_raw(k, &zx, &zv, w[l], gx, gv);
                    }
                }
                field.energy += 0.5 * w[i] * fi;
            }
            field
        })
        .collect()
}

/// Discount factors of the scheme for step `dt`.
#[derive(Clone, Copy)]
struct Discount {
    lambda: f64,
    dt: f64,
    /// `e^{-lambda dt}`.
    step: f64,
    /// `int_0^dt e^{-lambda s} ds`.
    interval: f64,
}

impl Discount {
    fn new(lambda: f64, dt: f64) -> Self {
        let step = (-lambda * dt).exp();
        Self {
            lambda,
            dt,
            step,
            interval: -(-lambda * dt).exp_m1() / lambda,
        }
    }

    fn at(&self, t: f64) -> f64 {
        (-self.lambda * t).exp()
    }

    fn trapezoid(&self, n: usize, steps: usize) -> f64 {
        if n == 0 || n == steps {
            0.5 * self.dt
        } else {
            self.dt
        }
    }
}

struct Evaluation {
    energy: EnergyBreakdown,
    /// Scaled gradient `P^{-1} grad J`.
    scaled: Option<Vec<f64>>,
}

fn evaluate(e: &TrajectoryEnsemble, k: &KernelSpec, lambda: f64, grads: bool) -> Evaluation {
    let (n, steps, d) = (e.len(), e.steps, e.dim);
    let disc = Discount::new(lambda, e.dt());
    let roll = e.rollout();
    let fields = node_fields(e, &roll, k, grads);

    let mut control = 0.0;
    for i in 0..n {
        for j in 0..steps {
            let a2: f64 = e.control(i, j).iter().map(|c| c * c).sum();
            control += e.weights[i] * disc.at(e.time(j)) * disc.interval * a2 / (2.0 * lambda);
        }
    }
    let interaction: f64 = fields
        .iter()
        .enumerate()
        .map(|(j, f)| disc.trapezoid(j, steps) * disc.at(e.time(j)) * f.energy)
        .sum();
    let energy = EnergyBreakdown {
        control,
        interaction,
        total: control + interaction,
    };
    if !grads {
        return Evaluation {
            energy,
            scaled: None,
        };
    }

    // Costates per unit weight, rescaled by e^{lambda t_j} so nothing underflows.
    let dt = disc.dt;
    let mut scaled = vec![0.0; e.controls.len()];
    for i in 0..n {
        let mut px: Vec<f64> = (0..d)
            .map(|c| disc.trapezoid(steps, steps) * fields[steps].dx[i * d + c])
            .collect();
        let mut pv: Vec<f64> = (0..d)
            .map(|c| disc.trapezoid(steps, steps) * fields[steps].dv[i * d + c])
            .collect();
        for j in (0..steps).rev() {
            let a = e.control(i, j);
            for c in 0..d {
                let push = disc.step * (0.5 * dt * dt * px[c] + dt * pv[c]);
                scaled[(i * steps + j) * d + c] = a[c] + lambda * push / disc.interval;
            }
            let om = disc.trapezoid(j, steps);
            for c in 0..d {
                let new_px = om * fields[j].dx[i * d + c] + disc.step * px[c];
                let new_pv = om * fields[j].dv[i * d + c] + disc.step * (dt * px[c] + pv[c]);
                px[c] = new_px;
                pv[c] = new_pv;
            }
        }
    }
    Evaluation {
        energy,
        scaled: Some(scaled),
    }
}

pub fn discrete_energy(
    e: &TrajectoryEnsemble,
    k: &KernelSpec,
    lambda: f64,
) -> Result<EnergyBreakdown> {
    check_kernel(k)?;
    check_lambda(lambda)?;
    Ok(evaluate(e, k, lambda, false).energy)
}

/// Exact gradient of [`discrete_energy`] with respect to every control,
/// in the layout of [`TrajectoryEnsemble::controls`].
pub fn energy_gradient(e: &TrajectoryEnsemble, k: &KernelSpec, lambda: f64) -> Result<Vec<f64>> {
    check_kernel(k)?;
    check_lambda(lambda)?;
    let disc = Discount::new(lambda, e.dt());
    let mut g = evaluate(e, k, lambda, true).scaled.unwrap();
    let (steps, d) = (e.steps, e.dim);
    for (idx, gc) in g.iter_mut().enumerate() {
        let (i, j) = (idx / (steps * d), (idx / d) % steps);
        *gc *= e.weights[i] * disc.at(e.time(j)) * disc.interval / lambda;
    }
    Ok(g)
}

/// Sup over trajectories and interior intervals of the discrete
/// Euler-Lagrange defect
/// `a + D_vF - lambda^{-1}(-lambda^{-1} a'' + 2 a' + d/dt D_vF - D_xF)`,
/// divided by `1 + max |a|`.
///
/// The derivatives are the centered second difference of the discounted
/// controls and the node differences of the discounted interaction forces on
/// the stencil `j-1, j, j+1`, so the defect vanishes at stationary points of the
/// discrete energy.
pub fn el_residual(e: &TrajectoryEnsemble, k: &KernelSpec, lambda: f64) -> Result<f64> {
    check_kernel(k)?;
    check_lambda(lambda)?;
    let steps = e.steps;
    if steps < 8 {
        return Err(Error::InvalidArgument(format!(
            "Euler-Lagrange residual needs at least 8 intervals, got {steps}"
        )));
    }
    let (n, d) = (e.len(), e.dim);
    let disc = Discount::new(lambda, e.dt());
    let dt = disc.dt;
    let roll = e.rollout();
    let fields = node_fields(e, &roll, k, true);
    // Discount factors relative to the stencil centre t_{j+1/2}.
    let half = (0.5 * lambda * dt).exp();
    let rel = [half * half * half, half, 1.0 / half];
    let scale = disc.interval / lambda;
    let mut worst: f64 = 0.0;
    let mut amax: f64 = 0.0;
    for i in 0..n {
        for j in 0..steps {
            amax = amax.max(e.control(i, j).iter().fold(0.0, |m: f64, c| m.max(c.abs())));
        }
        for j in 1..steps - 1 {
            let mut sq = 0.0;
            for c in 0..d {
                let a = |jj: usize| e.control(i, jj)[c];
                let accel = scale * (rel[0] * a(j - 1) - 2.0 * rel[1] * a(j) + rel[2] * a(j + 1));
                let (dv0, dv1) = (fields[j].dv[i * d + c], fields[j + 1].dv[i * d + c]);
                let (dx0, dx1) = (fields[j].dx[i * d + c], fields[j + 1].dx[i * d + c]);
                let force = -dt * dt * (rel[2] * dv1 - rel[1] * dv0)
                    + 0.5 * dt * dt * dt * (rel[1] * dx0 + rel[2] * dx1);
                let r = (accel + force) / (lambda * dt * dt * dt);
                sq += r * r;
            }
            worst = worst.max(sq.sqrt());
        }
    }
    Ok(worst / (1.0 + amax))
}

/// Optimizer budget and stopping rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    /// Quasi-Newton iterations.
    pub max_iterations: usize,
    /// Stop once `max |P^{-1} grad J| <= tolerance`.
    pub tolerance: f64,
    /// Stored curvature pairs.
    pub memory: usize,
    /// Newton-Krylov polishing steps after the quasi-Newton phase.
    pub newton_iterations: usize,
    pub krylov_iterations: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-10,
            memory: 12,
            newton_iterations: 12,
            krylov_iterations: 400,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Minimizer {
    pub ensemble: TrajectoryEnsemble,
    pub energy: EnergyBreakdown,
    pub converged: bool,
    pub iterations: usize,
    /// `max |P^{-1} grad J|` at the returned iterate.
    pub gradient_norm: f64,
    pub history: Vec<f64>,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, c| m.max(c.abs()))
}

/// Minimizes the discrete energy over controls, starting from free flight.
///
/// A limited-memory BFGS phase in the metric of the control Hessian
/// (Armijo backtracking on `J`) is followed by Newton-Krylov steps on the
/// scaled gradient, which resolve the heavily discounted late intervals
/// that carry almost no weight in `J` itself.
pub fn minimize_energy(
    m0: &ParticleEnsemble,
    k: &KernelSpec,
    lambda: f64,
    horizon: f64,
    steps: usize,
    opts: &OptimizerOptions,
) -> Result<Minimizer> {
    check_kernel(k)?;
    check_lambda(lambda)?;
    let start = TrajectoryEnsemble::free_flight(m0, horizon, steps)?;
    let (n, d) = (start.len(), start.dim);
    let disc = Discount::new(lambda, start.dt());
    let metric: Vec<f64> = (0..n * steps * d)
        .map(|idx| start.weights[idx / (steps * d)] * disc.at(start.time((idx / d) % steps)))
        .collect();
    let dot_p = |u: &[f64], v: &[f64]| -> f64 {
        u.iter()
            .zip(v)
            .zip(&metric)
            .map(|((a, b), p)| a * b * p)
            .sum()
    };
    let eval = |a: &[f64]| -> Result<(TrajectoryEnsemble, EnergyBreakdown, Vec<f64>)> {
        let e = start.with_controls(a.to_vec())?;
        let ev = evaluate(&e, k, lambda, true);
        Ok((e, ev.energy, ev.scaled.unwrap()))
    };

    let mut x = start.controls.clone();
    let (mut ens, mut energy, mut r) = eval(&x)?;
    let mut history = vec![sup(&r)];
    let mut pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut iterations = 0;

    while iterations < opts.max_iterations && sup(&r) > opts.tolerance {
        iterations += 1;
        let mut q = r.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot_p(s, &q);
            q.iter_mut().zip(y).for_each(|(qc, yc)| *qc -= a * yc);
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.last() {
            let gamma = dot_p(s, y) / dot_p(y, y);
            q.iter_mut().for_each(|c| *c *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot_p(y, &q);
            q.iter_mut().zip(s).for_each(|(qc, sc)| *qc += (a - b) * sc);
        }
        let mut dir: Vec<f64> = q.iter().map(|c| -c).collect();
        let mut slope = dot_p(&r, &dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = r.iter().map(|c| -c).collect();
            slope = dot_p(&r, &dir);
        }
        // Directional derivative of J along `dir`, up to the positive factor interval / lambda.
        let slope_j = slope * disc.interval / lambda;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let (te, ten, tr) = eval(&trial)?;
            let armijo = ten.total <= energy.total + 1e-4 * step * slope_j;
            let flat = ten.total <= energy.total + 1e-13 * energy.total.abs() && sup(&tr) < sup(&r);
            if armijo || flat {
                accepted = Some((trial, te, ten, tr));
                break;
            }
            step *= 0.5;
        }
        let Some((nx, ne, nen, nr)) = accepted else {
            if pairs.is_empty() {
                break;
            }
            pairs.clear();
            continue;
        };
        let s: Vec<f64> = nx.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = nr.iter().zip(&r).map(|(a, b)| a - b).collect();
        let sy = dot_p(&s, &y);
        if sy > 1e-300 && sy.is_finite() {
            pairs.push((s, y, 1.0 / sy));
            if pairs.len() > opts.memory.max(1) {
                pairs.remove(0);
            }
        }
        x = nx;
        ens = ne;
        energy = nen;
        r = nr;
        history.push(sup(&r));
    }

    for _ in 0..opts.newton_iterations {
        let rn = sup(&r);
        if rn <= opts.tolerance {
            break;
        }
        let h = 1e-5 * (1.0 + sup(&x));
        let jvp = |v: &[f64]| -> Result<Vec<f64>> {
            let vn = sup(v);
            if vn == 0.0 {
                return Ok(vec![0.0; v.len()]);
            }
            let eps = h / vn;
            let plus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + eps * b).collect();
            let minus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - eps * b).collect();
            let (_, _, rp) = eval(&plus)?;
            let (_, _, rm) = eval(&minus)?;
            Ok(rp
                .iter()
                .zip(&rm)
                .map(|(p, m)| (p - m) / (2.0 * eps))
                .collect())
        };
        let rhs: Vec<f64> = r.iter().map(|c| -c).collect();
        let r2 = rhs.iter().map(|c| c * c).sum::<f64>().sqrt();
        let (delta, _) = gmres(
            jvp,
            &rhs,
            (1e-4 * r2).max(0.1 * opts.tolerance),
            60,
            opts.krylov_iterations,
        )?;
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + step * b).collect();
            let (te, ten, tr) = eval(&trial)?;
            if sup(&tr) < rn && ten.total <= energy.total + 1e-8 * energy.total.abs() + 1e-300 {
                x = trial;
                ens = te;
                energy = ten;
                r = tr;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        history.push(sup(&r));
        if !improved {
            break;
        }
    }

    let gradient_norm = sup(&r);
    Ok(Minimizer {
        ensemble: ens,
        energy,
        converged: gradient_norm <= opts.tolerance,
        iterations,
        gradient_norm,
        history,
    })
}

#[cfg(test)]
mod tests;

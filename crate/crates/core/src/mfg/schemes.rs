use super::{ConvolutionTable, PdeConfig, PdeGrid};
use crate::coupling::KernelSpec;
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::measures::{GridDensity, GridFunction, MeasurePath};
use crate::numerics::implicit_neumann_diffusion;

/// Precomputed coefficients shared by the backward and forward sweeps.
pub(super) struct Schemes {
    lambda: f64,
    nu: f64,
    dt: f64,
    steps: usize,
    grid: PdeGrid,
    v_center: Vec<f64>,
    v_face: Vec<f64>,
    conv: Option<ConvolutionTable>,
    boundary_tolerance: f64,
}

impl Schemes {
    pub(super) fn new(cfg: &PdeConfig, h: &HamiltonianSpec, k: &KernelSpec) -> Result<Self> {
        let mut s = Self::without_kernel(cfg, h)?;
        if !k.is_zero() {
            s.conv = Some(ConvolutionTable::new(k, s.grid.dx, s.grid.nx)?);
        }
        Ok(s)
    }

    fn without_kernel(cfg: &PdeConfig, h: &HamiltonianSpec) -> Result<Self> {
        let grid = cfg.grid();
        let drift = h.drift();
        if drift.dim().is_some_and(|d| d != 1) {
            return Err(Error::Dimension(
                "the grid solvers need a one-dimensional drift".into(),
            ));
        }
        let times = cfg.times()?;
        Ok(Self {
            lambda: cfg.lambda,
            nu: cfg.viscosity(),
            dt: cfg.horizon / (times.len() - 1) as f64,
            steps: times.len() - 1,
            grid,
            v_center: (0..grid.nx)
                .map(|i| drift.eval_1d(grid.center(i)))
                .collect(),
            v_face: (0..grid.nx - 1)
                .map(|i| drift.eval_1d(grid.face(i)))
                .collect(),
            conv: None,
            boundary_tolerance: cfg.boundary_tolerance,
        })
    }

    /// Backward sweep with the coupling evaluated along `m_path`.
    pub(super) fn hjb(&self, m_path: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.hjb_with(|n, out| match &self.conv {
            Some(c) => c.coupling(&m_path[n], out),
            None => out.iter_mut().for_each(|o| *o = 0.0),
        })
    }

    /// Backward sweep: exponential integrator for the discount with the
    /// source and Godunov Hamiltonian frozen over the step, then an implicit
    /// diffusion solve.
    pub(super) fn hjb_with(
        &self,
        mut source: impl FnMut(usize, &mut [f64]),
    ) -> Result<Vec<Vec<f64>>> {
        let nx = self.grid.nx;
        let dx = self.grid.dx;
        let lam = self.lambda;
        let decay = (-lam * self.dt).exp();
        let gain = -(-lam * self.dt).exp_m1() / lam;
        let mut u = vec![vec![0.0; nx]; self.steps + 1];
        let mut f = vec![0.0; nx];
        for n in (0..self.steps).rev() {
            source(n, &mut f);
            let next = &u[n + 1];
            let mut cur = vec![0.0; nx];
            let mut worst = 0.0f64;
            for i in 0..nx {
                let pm = if i == 0 {
                    0.0
                } else {
                    (next[i] - next[i - 1]) / dx
                };
                let pp = if i + 1 == nx {
                    0.0
                } else {
                    (next[i + 1] - next[i]) / dx
                };
                let v = self.v_center[i];
                let pstar = v / lam;
                let g = |q: f64| 0.5 * lam * q * q - v * q;
                let left = pm.max(pstar);
                let right = pp.min(pstar);
                let ham = g(left).max(g(right));
                let speed = (lam * left - v) + (v - lam * right);
                worst = worst.max(gain * speed / dx);
                cur[i] = decay * next[i] + gain * (f[i] - ham);
            }
            if worst > decay * (1.0 + 1e-12) {
                return Err(Error::Stability {
                    bound: "hjb monotonicity: dt * |v - lambda Du| / dx <= exp(-lambda dt)",
                    measured: worst,
                    limit: decay,
                });
            }
            implicit_neumann_diffusion(&mut cur, self.nu, self.dt, dx);
            if let Some(bad) = cur.iter().find(|c| !c.is_finite()) {
                return Err(Error::Stability {
                    bound: "hjb finiteness (reduce dt)",
                    measured: *bad,
                    limit: f64::MAX,
                });
            }
            u[n] = cur;
        }
        Ok(u)
    }

    /// Forward sweep: flux-limited upwind transport with face drift
    /// `v - lambda Du`, then an implicit diffusion solve.
    pub(super) fn fp(&self, u: &[Vec<f64>], m0: &[f64]) -> Result<Vec<Vec<f64>>> {
        let dx = self.grid.dx;
        let lam = self.lambda;
        let mut path = Vec::with_capacity(self.steps + 1);
        self.check_boundary(m0)?;
        path.push(m0.to_vec());
        let mut speed = vec![0.0; self.grid.nx - 1];
        for n in 0..self.steps {
            for (i, s) in speed.iter_mut().enumerate() {
                *s = self.v_face[i] - lam * (u[n][i + 1] - u[n][i]) / dx;
            }
            let mut m = transport_step(path.last().expect("nonempty"), &speed, self.dt, dx)?;
            implicit_neumann_diffusion(&mut m, self.nu, self.dt, dx);
            self.check_boundary(&m)?;
            path.push(m);
        }
        Ok(path)
    }

    fn check_boundary(&self, m: &[f64]) -> Result<()> {
        let b = (m[0] + m[m.len() - 1]) * self.grid.dx;
        if b > self.boundary_tolerance {
            return Err(Error::DomainTooSmall {
                boundary_mass: b,
                tolerance: self.boundary_tolerance,
            });
        }
        Ok(())
    }
}

/// One explicit upwind step of `m_t + (b m)_x = 0` with zero flux at the
/// outer faces. `speed[i]` is the velocity at the face between cells `i` and
/// `i + 1`.
///
/// Outflow from a cell is capped at its content, so the update is exactly
/// nonnegative; fluxes are shared by neighbours, so mass is conserved.
pub(crate) fn transport_step(m: &[f64], speed: &[f64], dt: f64, dx: f64) -> Result<Vec<f64>> {
    let nx = m.len();
    let ratio = dt / dx;
    let cfl = speed.iter().fold(0.0f64, |a, s| a.max(s.abs())) * ratio;
    if !(cfl <= 1.0) {
        return Err(Error::Stability {
            bound: "transport cfl: |b| dt / dx <= 1",
            measured: cfl,
            limit: 1.0,
        });
    }
    let mut right = vec![0.0; nx];
    let mut left = vec![0.0; nx];
    let mut out = vec![0.0; nx];
    for i in 0..nx {
        let r = if i + 1 < nx {
            speed[i].max(0.0) * ratio * m[i]
        } else {
            0.0
        };
        let l = if i > 0 {
            (-speed[i - 1]).max(0.0) * ratio * m[i]
        } else {
            0.0
        };
        let total = r + l;
        if total >= m[i] && total > 0.0 {
            let s = m[i] / total;
            right[i] = r * s;
            left[i] = m[i] - right[i];
            out[i] = 0.0;
        } else {
            right[i] = r;
            left[i] = l;
            out[i] = m[i] - total;
        }
    }
    for i in 0..nx {
        if i > 0 {
            out[i] += right[i - 1];
        }
        if i + 1 < nx {
            out[i] += left[i + 1];
        }
    }
    Ok(out)
}

fn check_path(cfg: &PdeConfig, len: usize) -> Result<()> {
    let nodes = cfg.times()?.len();
    if len != nodes {
        return Err(Error::Dimension(format!(
            "path has {len} time nodes, configuration has {nodes}"
        )));
    }
    Ok(())
}

/// Value function along a given density path, `u(T) = 0`.
pub fn hjb_backward(
    cfg: &PdeConfig,
    h: &HamiltonianSpec,
    k: &KernelSpec,
    m_path: &MeasurePath<GridDensity>,
) -> Result<Vec<GridFunction>> {
    cfg.validate()?;
    check_path(cfg, m_path.len())?;
    let grid = cfg.grid();
    if let Some(bad) = m_path.measures().iter().position(|m| !grid.matches(m)) {
        return Err(Error::Grid(format!(
            "density at node {bad} is not on the solver grid"
        )));
    }
    let times = cfg.times()?;
    if m_path
        .times()
        .iter()
        .zip(&times)
        .any(|(a, b)| (a - b).abs() > 1e-9 * cfg.horizon)
    {
        return Err(Error::Grid(
            "density path uses a different time grid".into(),
        ));
    }
    let s = Schemes::new(cfg, h, k)?;
    let m: Vec<Vec<f64>> = m_path
        .measures()
        .iter()
        .map(|d| d.values().to_vec())
        .collect();
    Ok(s.hjb(&m)?.into_iter().map(|v| grid.function(v)).collect())
}

/// Value function for an explicit source `F(x_i, t_n)` given per time node.
pub fn hjb_backward_source(
    cfg: &PdeConfig,
    h: &HamiltonianSpec,
    source: &[Vec<f64>],
) -> Result<Vec<GridFunction>> {
    cfg.validate()?;
    check_path(cfg, source.len())?;
    if source.iter().any(|f| f.len() != cfg.nx) {
        return Err(Error::Dimension(format!(
            "source rows must have {} entries",
            cfg.nx
        )));
    }
    let s = Schemes::without_kernel(cfg, h)?;
    let grid = cfg.grid();
    Ok(s.hjb_with(|n, out| out.copy_from_slice(&source[n]))?
        .into_iter()
        .map(|v| grid.function(v))
        .collect())
}

/// Density path driven by the drift `-D_pH(lambda Du, x) = v - lambda Du`.
pub fn fp_forward(
    cfg: &PdeConfig,
    h: &HamiltonianSpec,
    u_path: &[GridFunction],
    m0: &GridDensity,
) -> Result<MeasurePath<GridDensity>> {
    cfg.validate()?;
    check_path(cfg, u_path.len())?;
    let grid = cfg.grid();
    if !grid.matches(m0) {
        return Err(Error::Grid(
            "initial density is not on the solver grid".into(),
        ));
    }
    if u_path.iter().any(|u| u.values.len() != cfg.nx) {
        return Err(Error::Dimension(format!(
            "value function rows must have {} entries",
            cfg.nx
        )));
    }
    let s = Schemes::without_kernel(cfg, h)?;
    let u: Vec<Vec<f64>> = u_path.iter().map(|f| f.values.clone()).collect();
    let m = s.fp(&u, m0.values())?;
    MeasurePath::new(
        cfg.times()?,
        m.into_iter()
            .map(|v| GridDensity::from_raw(grid.origin, grid.dx, v))
            .collect(),
    )
}

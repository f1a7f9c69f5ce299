//! Kinetic Cucker-Smale flow as self-consistent characteristics: for atomic
//! data the weighted particle system is the measure-valued solution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::KernelSpec;
use crate::error::{Error, Result};
use crate::measures::{Component, Layout, MeasurePath, Moment2, ParticleEnsemble};
use crate::numerics::{rk4_step, step_count};

fn alignment_params(k: &KernelSpec) -> Result<(f64, f64)> {
    k.validate()?;
    match *k {
        KernelSpec::CuckerSmale { alpha, beta } => Ok((alpha, beta)),
        _ => Err(Error::InvalidArgument(format!(
            "alignment dynamics need the cucker_smale kernel, got {}",
            k.name()
        ))),
    }
}

/// Accelerations `a_i = -sum_j w_j 2 (v_i - v_j) / g(x_i - x_j)` on the flat
/// phase-space state `[x_1, v_1, x_2, v_2, ...]`.
fn accelerations(alpha: f64, beta: f64, state: &[f64], w: &[f64], d: usize) -> Vec<f64> {
    let width = 2 * d;
    let n = w.len();
    (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let zi = &state[i * width..(i + 1) * width];
            let mut acc = vec![0.0; d];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let zj = &state[j * width..(j + 1) * width];
                let r2: f64 = (0..d).map(|c| (zi[c] - zj[c]).powi(2)).sum();
                let scale = 2.0 * w[j] / KernelSpec::cs_weight(alpha, beta, r2);
                for c in 0..d {
                    acc[c] -= scale * (zi[d + c] - zj[d + c]);
                }
            }
            acc
        })
        .collect()
}

/// Per-atom accelerations `-D_v F(x_i, v_i, m)`, flattened atom by atom.
pub fn cs_rhs(ensemble: &ParticleEnsemble, k: &KernelSpec) -> Result<Vec<f64>> {
    let (alpha, beta) = alignment_params(k)?;
    if ensemble.layout() != Layout::Phase {
        return Err(Error::Dimension(
            "alignment dynamics need a phase-space ensemble".into(),
        ));
    }
    Ok(accelerations(
        alpha,
        beta,
        ensemble.coords(),
        ensemble.weights(),
        ensemble.spatial_dim(),
    ))
}

/// Integration controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsOptions {
    /// Keep every `record_every`-th node (the last node is always kept).
    pub record_every: usize,
    /// Compare against a half-step run and fail if the Richardson estimate of
    /// the final-state error exceeds `step_tolerance`.
    pub step_check: bool,
    pub step_tolerance: f64,
}

impl Default for CsOptions {
    fn default() -> Self {
        Self {
            record_every: 1,
            step_check: true,
            step_tolerance: 1e-6,
        }
    }
}

fn integrate(
    alpha: f64,
    beta: f64,
    m0: &ParticleEnsemble,
    horizon: f64,
    steps: usize,
    mut record: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    let d = m0.spatial_dim();
    let width = 2 * d;
    let w = m0.weights().to_vec();
    let dt = horizon / steps as f64;
    let mut rhs = |y: &[f64]| -> Result<Vec<f64>> {
        let a = accelerations(alpha, beta, y, &w, d);
        let mut out = vec![0.0; y.len()];
        for i in 0..w.len() {
            out[i * width..i * width + d].copy_from_slice(&y[i * width + d..(i + 1) * width]);
            out[i * width + d..(i + 1) * width].copy_from_slice(&a[i * d..(i + 1) * d]);
        }
        Ok(out)
    };
    let mut y = m0.coords().to_vec();
    for n in 1..=steps {
        y = rk4_step(&y, dt, &mut rhs)?;
        if y.iter().any(|c| !c.is_finite()) {
            return Err(Error::Stability {
                bound: "alignment integration finiteness (reduce dt)",
                measured: f64::INFINITY,
                limit: f64::MAX,
            });
        }
        record(n, &y);
    }
    Ok(y)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// RK4 characteristics with the default options.
pub fn solve_cs(
    m0: &ParticleEnsemble,
    k: &KernelSpec,
    horizon: f64,
    dt: f64,
) -> Result<MeasurePath<ParticleEnsemble>> {
    solve_cs_with(m0, k, horizon, dt, &CsOptions::default())
}

pub fn solve_cs_with(
    m0: &ParticleEnsemble,
    k: &KernelSpec,
    horizon: f64,
    dt: f64,
    opts: &CsOptions,
) -> Result<MeasurePath<ParticleEnsemble>> {
    let (alpha, beta) = alignment_params(k)?;
    if m0.layout() != Layout::Phase {
        return Err(Error::Dimension(
            "alignment dynamics need a phase-space ensemble".into(),
        ));
    }
    let steps = step_count(horizon, dt)?;
    let stride = opts.record_every.max(1);
    let mut times = vec![0.0];
    let mut states = vec![m0.coords().to_vec()];
    let coarse = integrate(alpha, beta, m0, horizon, steps, |n, y| {
        if n % stride == 0 || n == steps {
            times.push(horizon * n as f64 / steps as f64);
            states.push(y.to_vec());
        }
    })?;
    if opts.step_check {
        let fine = integrate(alpha, beta, m0, horizon, 2 * steps, |_, _| {})?;
        let estimate = sup_diff(&coarse, &fine) * 16.0 / 15.0;
        if estimate > opts.step_tolerance {
            return Err(Error::StepCheck {
                estimate,
                tolerance: opts.step_tolerance,
            });
        }
    }
    let measures = states
        .into_iter()
        .map(|c| m0.with_coords(c))
        .collect::<Result<Vec<_>>>()?;
    MeasurePath::new(times, measures)
}

/// Ratio `|y_dt - y_{dt/2}| / |y_{dt/2} - y_{dt/4}|` of final states; about 16
/// for a fourth-order integrator in its asymptotic regime.
pub fn rk4_order_ratio(
    m0: &ParticleEnsemble,
    k: &KernelSpec,
    horizon: f64,
    dt: f64,
) -> Result<f64> {
    let (alpha, beta) = alignment_params(k)?;
    let steps = step_count(horizon, dt)?;
    let y1 = integrate(alpha, beta, m0, horizon, steps, |_, _| {})?;
    let y2 = integrate(alpha, beta, m0, horizon, 2 * steps, |_, _| {})?;
    let y4 = integrate(alpha, beta, m0, horizon, 4 * steps, |_, _| {})?;
    Ok(sup_diff(&y1, &y2) / sup_diff(&y2, &y4))
}

/// Velocity second moment and diameter along a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlockingDiagnostics {
    pub velocity_moment: Vec<f64>,
    pub velocity_diameter: Vec<f64>,
    /// Largest one-step increase of the velocity moment.
    pub max_moment_increase: f64,
    pub mean_velocity_drift: f64,
}

pub fn flocking_diagnostics(path: &MeasurePath<ParticleEnsemble>) -> Result<FlockingDiagnostics> {
    let velocity_moment = path
        .measures()
        .iter()
        .map(|m| m.moment2(Component::Velocity))
        .collect::<Result<Vec<_>>>()?;
    let velocity_diameter = path
        .measures()
        .iter()
        .map(|m| m.velocity_diameter())
        .collect::<Result<Vec<_>>>()?;
    let max_moment_increase = velocity_moment
        .windows(2)
        .fold(0.0f64, |a, w| a.max(w[1] - w[0]));
    let v0 = path.measures()[0].mean_velocity()?;
    let mut drift = 0.0f64;
    for m in path.measures() {
        drift = drift.max(sup_diff(&m.mean_velocity()?, &v0));
    }
    Ok(FlockingDiagnostics {
        velocity_moment,
        velocity_diameter,
        max_moment_increase,
        mean_velocity_drift: drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat() -> KernelSpec {
        KernelSpec::CuckerSmale {
            alpha: 1.0,
            beta: 0.0,
        }
    }

    fn two_body() -> ParticleEnsemble {
        ParticleEnsemble::uniform(Layout::Phase, 1, vec![0.0, 1.0, 0.0, -1.0]).unwrap()
    }

    fn random_flock(n: usize, seed: u64) -> ParticleEnsemble {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        ParticleEnsemble::uniform(Layout::Phase, 2, coords).unwrap()
    }

    #[test]
    fn rhs_examples() {
        let single = ParticleEnsemble::dirac(Layout::Phase, &[0.3, -0.2]).unwrap();
        assert_eq!(cs_rhs(&single, &flat()).unwrap(), vec![0.0]);
        assert_eq!(cs_rhs(&two_body(), &flat()).unwrap(), vec![-2.0, 2.0]);
        let pos = ParticleEnsemble::dirac(Layout::Position, &[0.3]).unwrap();
        assert!(cs_rhs(&pos, &flat()).is_err());
    }

    #[test]
    fn two_body_velocity_decays_exponentially() {
        let p = solve_cs(&two_body(), &flat(), 2.0, 1e-3).unwrap();
        for (t, m) in p.iter() {
            assert!((m.velocity(0).unwrap()[0] - (-2.0 * t).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn momentum_conserved_and_energy_dissipated() {
        let k = KernelSpec::CuckerSmale {
            alpha: 1.0,
            beta: 0.7,
        };
        let p = solve_cs(&random_flock(64, 3), &k, 5.0, 1e-2).unwrap();
        let diag = flocking_diagnostics(&p).unwrap();
        assert!(diag.mean_velocity_drift <= 1e-9);
        assert!(diag.max_moment_increase <= 1e-12);
        assert!(diag.velocity_diameter.last().unwrap() < &diag.velocity_diameter[0]);
    }

    #[test]
    fn fourth_order_convergence() {
        let k = KernelSpec::CuckerSmale {
            alpha: 1.0,
            beta: 0.5,
        };
        let r = rk4_order_ratio(&random_flock(8, 9), &k, 1.0, 0.05).unwrap();
        assert!((8.0..=32.0).contains(&r), "ratio {r}");
    }

    #[test]
    fn coarse_steps_fail_the_check() {
        let k = KernelSpec::CuckerSmale {
            alpha: 1.0,
            beta: 0.0,
        };
        let m0 = ParticleEnsemble::uniform(Layout::Phase, 1, vec![0.0, 10.0, 0.0, -10.0]).unwrap();
        let e = solve_cs(&m0, &k, 1.0, 0.2).unwrap_err();
        assert!(matches!(e, Error::StepCheck { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn accelerations_balance(seed in 0u64..1000, n in 1usize..12, beta in 0.0..2.0f64) {
            let k = KernelSpec::CuckerSmale { alpha: 0.5, beta };
            let m = random_flock(n, seed);
            let a = cs_rhs(&m, &k).unwrap();
            for c in 0..2 {
                let s: f64 = (0..n).map(|i| m.weights()[i] * a[i * 2 + c]).sum();
                prop_assert!(s.abs() < 1e-12);
            }
        }
    }
}

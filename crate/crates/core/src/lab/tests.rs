use super::*;
use crate::hamiltonian::DriftField;
use crate::measures::{GridFunction, Layout, MeasurePath};
use crate::mfg::PdeGrid;

fn small_pde() -> PdeConfig {
    PdeConfig {
        nx: 96,
        half_width: 8.0,
        dt: 5e-3,
        ..Default::default()
    }
}

fn gaussian(cfg: &PdeConfig) -> GridDensity {
    let g = cfg.grid();
    GridDensity::gaussian(g.origin, g.dx, g.nx, 0.0, 0.6).unwrap()
}

fn synthetic(u: impl Fn(f64) -> f64, lambda: f64) -> MfgSolution {
    let grid = PdeGrid {
        origin: -4.0,
        dx: 0.125,
        nx: 64,
    };
    let values: Vec<f64> = (0..grid.nx).map(|i| u(grid.center(i))).collect();
    let m = GridDensity::gaussian(grid.origin, grid.dx, grid.nx, 0.0, 0.5).unwrap();
    MfgSolution {
        grid,
        lambda,
        nu: 0.0,
        u_path: vec![
            GridFunction {
                origin: grid.origin,
                spacing: grid.dx,
                values: values.clone(),
            };
            2
        ],
        m_path: MeasurePath::new(vec![0.0, 1.0], vec![m.clone(), m]).unwrap(),
        iterations: 1,
        residual: 0.0,
        residual_history: vec![0.0],
        converged: true,
        switched_at: None,
    }
}

#[test]
fn zero_solution_passes_every_bound() {
    let r = diagnostics_bounds(&synthetic(|_| 0.0, 10.0), 1.0, &BoundConstants::default());
    assert!(r.all_ok());
    assert_eq!(r.growth.measured, 0.0);
    assert_eq!(r.gradient.measured, 0.0);
    assert_eq!(r.semiconcavity.measured, 0.0);
}

#[test]
fn convex_injection_fails_semiconcavity() {
    let r = diagnostics_bounds(&synthetic(|x| x * x, 10.0), 1.0, &BoundConstants::default());
    assert!(!r.semiconcavity.ok);
    assert!((r.semiconcavity.measured - 20.0).abs() < 1e-9);
}

#[test]
fn window_times_stop_at_three_quarters() {
    let t = window_times(2.0, 0.75, 3);
    assert_eq!(t, vec![0.5, 1.0, 1.5]);
}

#[test]
fn lambda_lists_must_increase() {
    let k = KernelSpec::Zero;
    let h = HamiltonianSpec::default();
    let cfg = small_pde();
    let sweep = ClassicSweep {
        lambdas: vec![20.0, 5.0],
        pde: cfg.clone(),
        ..Default::default()
    };
    let err = run_lambda_sweep_classic(&h, &k, &gaussian(&cfg), &sweep).unwrap_err();
    assert!(err.to_string().contains("sweep.lambdas"));
}

#[test]
fn zero_kernel_classic_single_row() {
    let h = HamiltonianSpec::quadratic(DriftField::Constant { value: vec![0.5] });
    let cfg = small_pde();
    let sweep = ClassicSweep {
        lambdas: vec![40.0],
        pde: cfg.clone(),
        reference_dt: 5e-3,
        reference_particles: 400,
        ..Default::default()
    };
    let r = run_lambda_sweep_classic(&h, &KernelSpec::Zero, &gaussian(&cfg), &sweep).unwrap();
    assert_eq!(r.rows.len(), 1);
    let row = &r.rows[0];
    assert!(row.converged && !row.flagged);
    // Without coupling both flows are transport by v; they differ only by the viscosity.
    let nu: f64 = 40f64.powf(-0.5);
    let spread = (2.0 * nu * 0.75f64).sqrt();
    assert!(row.w1_sup.unwrap() <= spread, "{:?}", row.w1_sup);
    assert!(row.bounds.as_ref().unwrap().all_ok());
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn classic_report_is_reproducible() {
    let h = HamiltonianSpec::default();
    let k = KernelSpec::Exponential { alpha: 1.0, a: 1.0 };
    let cfg = small_pde();
    let sweep = ClassicSweep {
        lambdas: vec![10.0],
        pde: cfg.clone(),
        reference_dt: 5e-3,
        reference_particles: 300,
        seed: 3,
        ..Default::default()
    };
    let m0 = gaussian(&cfg);
    let a = run_lambda_sweep_classic(&h, &k, &m0, &sweep).unwrap();
    let b = run_lambda_sweep_classic(&h, &k, &m0, &sweep).unwrap();
    assert_eq!(
        a.without_timing().to_json().unwrap(),
        b.without_timing().to_json().unwrap()
    );
    assert!(a.reference.cross_validation_error < 0.05);
}

#[test]
fn single_atom_acceleration_row_is_exact() {
    let k = KernelSpec::CuckerSmale {
        alpha: 1.0,
        beta: 0.5,
    };
    let m0 = ParticleEnsemble::dirac(Layout::Phase, &[0.2, -0.7]).unwrap();
    let sweep = AccelerationSweep {
        lambdas: vec![10.0],
        steps: 40,
        ..Default::default()
    };
    let r = run_lambda_sweep_acceleration(&k, &m0, &sweep).unwrap();
    assert_eq!(r.rows.len(), 1);
    assert!(r.rows[0].w1_sup.unwrap() < 1e-12);
    assert_eq!(r.rows[0].energy, Some(0.0));
}

#[test]
fn acceleration_sweep_rejects_position_kernels() {
    let m0 = ParticleEnsemble::dirac(Layout::Phase, &[0.0, 1.0]).unwrap();
    let k = KernelSpec::Exponential { alpha: 1.0, a: 1.0 };
    assert!(run_lambda_sweep_acceleration(&k, &m0, &AccelerationSweep::default()).is_err());
}

#[test]
fn opposite_pair_sweep_certified_and_bounded() {
    let k = KernelSpec::CuckerSmale {
        alpha: 1.0,
        beta: 0.0,
    };
    let m0 = ParticleEnsemble::uniform(Layout::Phase, 1, vec![0.0, 1.0, 0.0, -1.0]).unwrap();
    let r = run_lambda_sweep_acceleration(&k, &m0, &AccelerationSweep::default()).unwrap();
    for row in &r.rows {
        assert!(!row.flagged);
        assert_eq!(row.energy_ok, Some(true));
    }
    let half: Vec<f64> = r.rows.iter().map(|row| row.w1_half.unwrap()).collect();
    assert!(half.windows(2).all(|w| w[1] < w[0]), "{half:?}");
    assert!(r.reference.cross_validation_error < 1e-9);
}

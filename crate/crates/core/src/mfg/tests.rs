use super::*;
use crate::hamiltonian::DriftField;
use crate::measures::{wasserstein1_1d, Moment2};
use proptest::prelude::*;

fn still() -> HamiltonianSpec {
    HamiltonianSpec::quadratic(DriftField::Constant { value: vec![0.0] })
}

fn constant_drift(c: f64) -> HamiltonianSpec {
    HamiltonianSpec::quadratic(DriftField::Constant { value: vec![c] })
}

fn gaussian(cfg: &PdeConfig, mean: f64, std: f64) -> GridDensity {
    let g = cfg.grid();
    GridDensity::gaussian(g.origin, g.dx, g.nx, mean, std).unwrap()
}

fn zero_u(cfg: &PdeConfig) -> Vec<GridFunction> {
    let g = cfg.grid();
    cfg.times()
        .unwrap()
        .iter()
        .map(|_| g.function(vec![0.0; g.nx]))
        .collect()
}

#[test]
fn zero_source_gives_zero_value() {
    let cfg = PdeConfig {
        dt: 1e-2,
        ..Default::default()
    };
    let m0 = gaussian(&cfg, 0.0, 0.5);
    let path =
        MeasurePath::new(cfg.times().unwrap(), vec![m0; cfg.times().unwrap().len()]).unwrap();
    let u = hjb_backward(&cfg, &still(), &KernelSpec::Zero, &path).unwrap();
    assert!(u.iter().all(|f| f.max_abs() == 0.0));
}

#[test]
fn constant_source_matches_scalar_ode() {
    let cfg = PdeConfig {
        lambda: 10.0,
        dt: 1e-4,
        nx: 64,
        ..Default::default()
    };
    let c = 1.7;
    let times = cfg.times().unwrap();
    let source = vec![vec![c; cfg.nx]; times.len()];
    let u = hjb_backward_source(&cfg, &still(), &source).unwrap();
    for (t, f) in times.iter().zip(&u) {
        let exact = c / cfg.lambda * (1.0 - (-cfg.lambda * (cfg.horizon - t)).exp());
        for v in &f.values {
            assert!((v - exact).abs() < 1e-6, "t={t} got {v} want {exact}");
        }
    }
}

#[test]
fn linear_growth_source_scales_like_inverse_lambda() {
    let mut worst = 0.0f64;
    for lambda in [20.0, 40.0, 80.0] {
        let cfg = PdeConfig {
            lambda,
            dt: 1e-3,
            ..Default::default()
        };
        let grid = cfg.grid();
        let f: Vec<f64> = (0..grid.nx).map(|i| 1.0 + grid.center(i).abs()).collect();
        let source = vec![f; cfg.times().unwrap().len()];
        let u = hjb_backward_source(&cfg, &still(), &source).unwrap();
        for row in &u {
            for (i, v) in row.values.iter().enumerate() {
                worst = worst.max(lambda * v.abs() / (1.0 + grid.center(i).abs()));
            }
        }
    }
    assert!(worst <= 4.0, "lambda |u| / (1 + |x|) reached {worst}");
}

#[test]
fn no_drift_no_diffusion_is_stationary() {
    let cfg = PdeConfig {
        nu: Some(0.0),
        dt: 1e-2,
        ..Default::default()
    };
    let m0 = gaussian(&cfg, 0.3, 0.5);
    let path = fp_forward(&cfg, &still(), &zero_u(&cfg), &m0).unwrap();
    assert!(path.measures().iter().all(|m| m == &m0));
}

#[test]
fn unit_drift_translates() {
    let cfg = PdeConfig {
        nu: Some(0.0),
        nx: 512,
        dt: 1e-2,
        ..Default::default()
    };
    let m0 = gaussian(&cfg, -1.0, 0.5);
    let path = fp_forward(&cfg, &constant_drift(1.0), &zero_u(&cfg), &m0).unwrap();
    let shifted = gaussian(&cfg, 0.0, 0.5);
    let err = wasserstein1_1d(path.final_measure(), &shifted).unwrap();
    assert!(err <= cfg.grid().dx + cfg.dt, "W1 error {err}");
    assert!((path.final_measure().mean() - 0.0).abs() < 1e-9);
}

#[test]
fn heat_variance_grows_linearly() {
    let nu = 0.1;
    let cfg = PdeConfig {
        nu: Some(nu),
        dt: 1e-3,
        ..Default::default()
    };
    let m0 = gaussian(&cfg, 0.0, 0.5);
    let v0 = m0.variance();
    let path = fp_forward(&cfg, &still(), &zero_u(&cfg), &m0).unwrap();
    for (t, m) in path.iter() {
        let want = v0 + 2.0 * nu * t;
        assert!((m.variance() - want).abs() <= 0.02 * want);
    }
}

#[test]
fn cfl_violation_is_reported() {
    let cfg = PdeConfig {
        nu: Some(0.0),
        dt: 0.1,
        ..Default::default()
    };
    let m0 = gaussian(&cfg, 0.0, 0.5);
    let err = fp_forward(&cfg, &constant_drift(1.0), &zero_u(&cfg), &m0).unwrap_err();
    assert!(matches!(err, Error::Stability { .. }), "{err}");
}

#[test]
fn boundary_mass_is_checked() {
    let cfg = PdeConfig {
        half_width: 2.0,
        nx: 64,
        dt: 1e-2,
        ..Default::default()
    };
    let m0 = gaussian(&cfg, 0.0, 0.8);
    let err = fp_forward(&cfg, &still(), &zero_u(&cfg), &m0).unwrap_err();
    assert!(matches!(err, Error::DomainTooSmall { .. }), "{err}");
}

#[test]
fn uncoupled_fixed_point_takes_one_iteration() {
    let cfg = PdeConfig {
        dt: 1e-2,
        ..Default::default()
    };
    let m0 = gaussian(&cfg, 0.0, 0.5);
    let h = HamiltonianSpec::quadratic(DriftField::Sinusoidal {
        amplitude: 0.5,
        frequency: 1.0,
        phase: 0.0,
    });
    let sol = solve_mfg_fixed_point(&cfg, &h, &KernelSpec::Zero, &m0).unwrap();
    assert_eq!(sol.iterations, 1);
    assert_eq!(sol.residual, 0.0);
    assert!(sol.converged);
}

#[test]
fn exponential_coupling_converges() {
    let cfg = PdeConfig {
        lambda: 20.0,
        nx: 256,
        dt: 2e-3,
        ..Default::default()
    };
    let m0 = gaussian(&cfg, 0.0, 0.5);
    let k = KernelSpec::Exponential { alpha: 1.0, a: 1.0 };
    let sol = solve_mfg_fixed_point(&cfg, &still(), &k, &m0).unwrap();
    assert!(
        sol.converged && sol.residual < 1e-6,
        "{:?}",
        sol.residual_history
    );
    for m in sol.m_path.measures() {
        assert!((m.mass() - 1.0).abs() <= 1e-10);
        assert!(m.min_density() >= 0.0);
    }
    // Repulsion spreads the crowd.
    assert!(sol.m_path.final_measure().variance() > m0.variance());
}

#[test]
fn fictitious_play_residuals_settle() {
    let cfg = PdeConfig {
        lambda: 20.0,
        dt: 2e-3,
        mode: FixedPointMode::FictitiousPlay,
        max_iterations: 40,
        ..Default::default()
    };
    let m0 = gaussian(&cfg, 0.0, 0.5);
    let k = KernelSpec::Exponential { alpha: 1.0, a: 1.0 };
    let sol = solve_mfg_fixed_point(&cfg, &still(), &k, &m0).unwrap();
    let h = &sol.residual_history;
    let burn = 3.min(h.len());
    for w in h[burn..].windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{h:?}");
    }
}

#[test]
fn invalid_lambda_names_field() {
    let cfg = PdeConfig {
        lambda: -1.0,
        ..Default::default()
    };
    match cfg.validate().unwrap_err() {
        Error::Validation { field, .. } => assert_eq!(field, "lambda"),
        e => panic!("{e}"),
    }
}

#[test]
fn convolution_table_matches_direct_sum() {
    let cfg = PdeConfig {
        nx: 32,
        half_width: 2.0,
        ..Default::default()
    };
    let g = cfg.grid();
    let k = KernelSpec::Morse { g: 0.5, l: 2.0 };
    let m = gaussian(&cfg, 0.2, 0.4);
    let table = ConvolutionTable::new(&k, g.dx, g.nx).unwrap();
    let mut f = vec![0.0; g.nx];
    let mut df = vec![0.0; g.nx];
    table.coupling(m.values(), &mut f);
    table.gradient(m.values(), &mut df);
    for i in 0..g.nx {
        let x = g.center(i);
        let direct = crate::coupling::eval_coupling(&k, &[x], None, &m).unwrap();
        let grad = crate::coupling::grad_coupling(&k, &[x], None, &m)
            .unwrap()
            .dx[0];
        assert!((f[i] - direct).abs() < 1e-13);
        assert!((df[i] - grad).abs() < 1e-13);
    }
    let _ = m.moment2(crate::measures::Component::All).unwrap();
}

fn small_cfg() -> PdeConfig {
    PdeConfig {
        nx: 96,
        half_width: 8.0,
        dt: 5e-3,
        horizon: 0.5,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fp_conserves_mass_and_sign(
        amp in 0.0..2.0f64,
        freq in 0.2..3.0f64,
        mean in -1.0..1.0f64,
        std in 0.3..0.8f64,
        nu in 0.0..0.3f64,
    ) {
        let cfg = PdeConfig { nu: Some(nu), ..small_cfg() };
        let g = cfg.grid();
        let m0 = gaussian(&cfg, mean, std);
        let u: Vec<GridFunction> = cfg.times().unwrap().iter().map(|t| {
            g.function((0..g.nx).map(|i| amp / cfg.lambda * (freq * g.center(i) + t).sin()).collect())
        }).collect();
        let path = fp_forward(&cfg, &constant_drift(0.3), &u, &m0).unwrap();
        for m in path.measures() {
            prop_assert!((m.mass() - 1.0).abs() <= 1e-10);
            prop_assert!(m.min_density() >= 0.0);
        }
    }

    #[test]
    fn nonnegative_source_gives_nonnegative_value(
        amp in 0.0..3.0f64,
        freq in 0.2..3.0f64,
        drift in -1.0..1.0f64,
        lambda in 5.0..60.0f64,
    ) {
        let cfg = PdeConfig { lambda, ..small_cfg() };
        let g = cfg.grid();
        let source: Vec<Vec<f64>> = cfg.times().unwrap().iter().map(|t| {
            (0..g.nx).map(|i| amp * (1.0 + (freq * g.center(i) - t).sin())).collect()
        }).collect();
        let u = hjb_backward_source(&cfg, &constant_drift(drift), &source).unwrap();
        for row in &u {
            prop_assert!(row.values.iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
    }
}

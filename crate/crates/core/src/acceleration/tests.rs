use super::*;
use crate::cucker_smale::solve_cs;
use crate::measures::{wasserstein1_particles, Component, Moment2, W1Mode};
use proptest::prelude::*;

fn cs(alpha: f64, beta: f64) -> KernelSpec {
    KernelSpec::CuckerSmale { alpha, beta }
}

fn opposite_pair() -> ParticleEnsemble {
    ParticleEnsemble::uniform(Layout::Phase, 1, vec![0.0, 1.0, 0.0, -1.0]).unwrap()
}

fn random_ensemble(n: usize, d: usize, steps: usize, seed: u64) -> TrajectoryEnsemble {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<f64> = (0..n * 2 * d)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let m0 = ParticleEnsemble::uniform(Layout::Phase, d, coords).unwrap();
    let e = TrajectoryEnsemble::free_flight(&m0, 1.0, steps).unwrap();
    let controls = (0..e.controls().len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    e.with_controls(controls).unwrap()
}

#[test]
fn single_free_trajectory_has_zero_energy() {
    let m0 = ParticleEnsemble::dirac(Layout::Phase, &[0.3, 2.0]).unwrap();
    let e = TrajectoryEnsemble::free_flight(&m0, 1.0, 10).unwrap();
    let en = discrete_energy(&e, &cs(1.0, 0.5), 3.0).unwrap();
    assert_eq!(en.total, 0.0);
}

#[test]
fn equal_velocities_do_not_interact() {
    let m0 = ParticleEnsemble::uniform(Layout::Phase, 1, vec![0.0, 1.0, 2.0, 1.0]).unwrap();
    let e = TrajectoryEnsemble::free_flight(&m0, 1.0, 10).unwrap();
    assert_eq!(
        discrete_energy(&e, &cs(1.0, 0.5), 2.0).unwrap().interaction,
        0.0
    );
}

#[test]
fn opposite_pair_interaction_matches_quadrature() {
    // F(m) = 1/2 * 2 * (1/4) * |2|^2 = 1, so the interaction is int_0^1 e^{-t} dt.
    let k = cs(1.0, 0.0);
    let at = |steps| {
        let e = TrajectoryEnsemble::free_flight(&opposite_pair(), 1.0, steps).unwrap();
        discrete_energy(&e, &k, 1.0).unwrap().interaction
    };
    let richardson = (4.0 * at(128) - at(64)) / 3.0;
    let exact = 1.0 - (-1.0f64).exp();
    assert!((richardson - exact).abs() < 1e-8, "{richardson} vs {exact}");
    assert!((at(64) - exact).abs() < 1e-4);
}

#[test]
fn kinematics_are_exact() {
    let e = random_ensemble(3, 2, 9, 5);
    let roll = e.rollout();
    let (k, d, dt) = (e.steps(), e.dim(), e.dt());
    for i in 0..e.len() {
        for j in 0..k {
            for c in 0..d {
                let at = |jj: usize| (i * (k + 1) + jj) * d + c;
                let a = e.control(i, j)[c];
                assert_eq!(roll.velocities[at(j + 1)], roll.velocities[at(j)] + dt * a);
                assert_eq!(
                    roll.positions[at(j + 1)],
                    roll.positions[at(j)] + dt * roll.velocities[at(j)] + 0.5 * dt * dt * a
                );
            }
        }
    }
    let mid = e.measure_at(e.time(4)).unwrap();
    assert!((mid.position(1)[0] - roll.positions[(k + 1 + 4) * d]).abs() < 1e-14);
}

#[test]
fn zero_controls_zero_kernel_gradient_vanishes() {
    let m0 = opposite_pair();
    let e = TrajectoryEnsemble::free_flight(&m0, 1.0, 12).unwrap();
    assert!(energy_gradient(&e, &KernelSpec::Zero, 5.0)
        .unwrap()
        .iter()
        .all(|g| *g == 0.0));
}

#[test]
fn single_trajectory_gradient_is_control_cost() {
    let e = random_ensemble(1, 2, 10, 7);
    let lambda = 4.0;
    let g = energy_gradient(&e, &cs(1.0, 0.5), lambda).unwrap();
    let dt = e.dt();
    for j in 0..e.steps() {
        // int_{t_j}^{t_j + dt} e^{-lambda t} dt
        let c = ((-lambda * e.time(j)).exp() - (-lambda * (e.time(j) + dt)).exp()) / lambda;
        for comp in 0..2 {
            let expect = c * e.control(0, j)[comp] / lambda;
            assert!((g[j * 2 + comp] - expect).abs() <= 1e-14 * expect.abs().max(1e-3));
        }
    }
}

fn fd_gradient(e: &TrajectoryEnsemble, k: &KernelSpec, lambda: f64) -> Vec<f64> {
    let base = e.controls().to_vec();
    (0..base.len())
        .map(|idx| {
            let h = 1e-5;
            let mut p = base.clone();
            p[idx] += h;
            let mut m = base.clone();
            m[idx] -= h;
            let jp = discrete_energy(&e.with_controls(p).unwrap(), k, lambda)
                .unwrap()
                .total;
            let jm = discrete_energy(&e.with_controls(m).unwrap(), k, lambda)
                .unwrap()
                .total;
            (jp - jm) / (2.0 * h)
        })
        .collect()
}

#[test]
fn empty_trajectory_ensembles_rejected() {
    let m0 = ParticleEnsemble::uniform(Layout::Position, 1, vec![0.0]).unwrap();
    assert!(TrajectoryEnsemble::free_flight(&m0, 1.0, 4).is_err());
    assert!(TrajectoryEnsemble::free_flight(&opposite_pair(), 1.0, 0).is_err());
    let e = TrajectoryEnsemble::free_flight(&opposite_pair(), 1.0, 4).unwrap();
    assert!(discrete_energy(&e, &KernelSpec::Morse { g: 0.5, l: 2.0 }, 1.0).is_err());
    assert!(el_residual(&e, &KernelSpec::Zero, 1.0).is_err());
}

#[test]
fn zero_kernel_minimizer_is_free_flight() {
    let m = minimize_energy(
        &opposite_pair(),
        &KernelSpec::Zero,
        10.0,
        1.0,
        20,
        &OptimizerOptions::default(),
    )
    .unwrap();
    assert!(m.converged);
    assert!(m.ensemble.controls().iter().all(|a| *a == 0.0));
    assert_eq!(m.energy.total, 0.0);
    assert_eq!(
        el_residual(&m.ensemble, &KernelSpec::Zero, 10.0).unwrap(),
        0.0
    );
}

#[test]
fn minimizer_respects_energy_bound() {
    let k = cs(1.0, 0.0);
    let lambda = 20.0;
    let m0 = opposite_pair();
    let m = minimize_energy(&m0, &k, lambda, 1.0, 100, &OptimizerOptions::default()).unwrap();
    assert!(m.converged, "gradient norm {}", m.gradient_norm);
    let c0 = k.cucker_smale_constant().unwrap();
    let bound = 2.0 * c0 / lambda * m0.moment2(Component::Velocity).unwrap();
    assert!(
        m.energy.total <= bound * 1.05,
        "{} > {bound}",
        m.energy.total
    );
    let free = discrete_energy(
        &TrajectoryEnsemble::free_flight(&m0, 1.0, 100).unwrap(),
        &k,
        lambda,
    )
    .unwrap();
    assert!(m.energy.total < free.total);
}

#[test]
fn minimizer_certified_and_sensitive_to_perturbation() {
    let k = cs(1.0, 0.5);
    let lambda = 20.0;
    let m0 =
        ParticleEnsemble::uniform(Layout::Phase, 1, vec![-0.5, 1.0, 0.0, -0.3, 0.7, 0.2]).unwrap();
    let m = minimize_energy(&m0, &k, lambda, 1.0, 80, &OptimizerOptions::default()).unwrap();
    assert!(m.converged, "gradient norm {}", m.gradient_norm);
    let res = el_residual(&m.ensemble, &k, lambda).unwrap();
    assert!(res <= 1e-4, "{res}");
    let mut a = m.ensemble.controls().to_vec();
    a[40] += 0.1;
    let perturbed = el_residual(&m.ensemble.with_controls(a).unwrap(), &k, lambda).unwrap();
    assert!(perturbed >= 10.0 * res.max(1e-12), "{perturbed} vs {res}");
}

#[test]
fn large_lambda_minimizer_tracks_alignment_flow() {
    let k = cs(1.0, 0.0);
    let lambda = 40.0;
    let m0 = opposite_pair();
    let m = minimize_energy(&m0, &k, lambda, 1.0, 200, &OptimizerOptions::default()).unwrap();
    assert!(m.converged);
    let flow = solve_cs(&m0, &k, 1.0, 1e-3).unwrap();
    let ours = m.ensemble.measure_at(0.5).unwrap();
    let w = wasserstein1_particles(&ours, flow.at(0.5), W1Mode::Exact).unwrap();
    assert!(w <= 0.05, "{w}");
}

#[test]
fn csv_has_one_row_per_node() {
    let e = random_ensemble(2, 1, 5, 1);
    let csv = e.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "trajectory,t,x1,v1,a1");
    assert_eq!(lines.count(), 2 * 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradient_matches_central_differences(n in 1usize..=4, d in 1usize..=2, steps in 2usize..=16, seed in 0u64..1000, beta in 0.0f64..1.0, lambda in 0.5f64..20.0) {
        let e = random_ensemble(n, d, steps, seed);
        let k = cs(1.0, beta);
        let g = energy_gradient(&e, &k, lambda).unwrap();
        let fd = fd_gradient(&e, &k, lambda);
        let scale = sup(&g).max(1e-12);
        for (a, b) in g.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn energy_invariant_under_relabeling(n in 2usize..=5, seed in 0u64..1000, shift in 1usize..5) {
        let e = random_ensemble(n, 1, 6, seed);
        let k = cs(0.5, 0.7);
        let s = shift % n;
        let perm: Vec<usize> = (0..n).map(|i| (i + s) % n).collect();
        let m0 = e.initial_measure().unwrap();
        let coords: Vec<f64> = perm.iter().flat_map(|&i| m0.point(i).to_vec()).collect();
        let controls: Vec<f64> = perm.iter().flat_map(|&i| (0..6).flat_map(move |j| vec![i, j])).collect::<Vec<_>>()
            .chunks(2).map(|c| e.control(c[0], c[1])[0]).collect();
        let m1 = ParticleEnsemble::uniform(Layout::Phase, 1, coords).unwrap();
        let e1 = TrajectoryEnsemble::free_flight(&m1, 1.0, 6).unwrap().with_controls(controls).unwrap();
        let a = discrete_energy(&e, &k, 3.0).unwrap().total;
        let b = discrete_energy(&e1, &k, 3.0).unwrap().total;
        prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
    }
}

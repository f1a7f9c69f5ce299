//! Hamiltonians `H(p, x) = |p|^2 / 2 - v(x) . p` with analytic `D_p H`, and a
//! sampled validator for the structural assumptions on `H`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CubicSpline, SplineEnd};

/// Drift field `v(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftField {
    /// Constant vector; its length fixes the dimension.
    Constant { value: Vec<f64> },
    /// `amplitude * sin(frequency * x_i + phase)` in every component.
    Sinusoidal {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// One-dimensional spline through tabulated values, constant outside the table.
    Tabulated(TabulatedDrift),
}

/// Spline drift on `[knots[0], knots[n-1]]` with zero end slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DriftTable", into = "DriftTable")]
pub struct TabulatedDrift {
    spline: CubicSpline,
}

/// Serialized form of [`TabulatedDrift`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTable {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl TabulatedDrift {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let spline = CubicSpline::new(
            knots,
            values,
            SplineEnd::Clamped(0.0),
            SplineEnd::Clamped(0.0),
        )
        .map_err(|e| Error::validation("hamiltonian.drift.knots", e.to_string()))?;
        Ok(Self { spline })
    }

    fn eval3(&self, x: f64) -> (f64, f64, f64) {
        let k = self.spline.knots();
        let (lo, hi) = (k[0], k[k.len() - 1]);
        if x <= lo {
            (self.spline.values()[0], 0.0, 0.0)
        } else if x >= hi {
            (*self.spline.values().last().expect("knots"), 0.0, 0.0)
        } else {
            self.spline.eval3(x)
        }
    }
}

impl TryFrom<DriftTable> for TabulatedDrift {
    type Error = Error;
    fn try_from(t: DriftTable) -> Result<Self> {
        Self::new(t.knots, t.values)
    }
}

impl From<TabulatedDrift> for DriftTable {
    fn from(t: TabulatedDrift) -> Self {
        DriftTable {
            knots: t.spline.knots().to_vec(),
            values: t.spline.values().to_vec(),
        }
    }
}

/// Sup norms of `v`, `Dv` and `D^2 v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftBounds {
    pub sup: f64,
    pub sup_grad: f64,
    pub sup_hess: f64,
}

impl DriftField {
    pub fn zero() -> Self {
        DriftField::Constant { value: vec![0.0] }
    }

    /// Fixed dimension, if the field has one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            DriftField::Constant { value } => Some(value.len()),
            DriftField::Sinusoidal { .. } => None,
            DriftField::Tabulated(_) => Some(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DriftField::Constant { value } => {
                if value.is_empty() || value.iter().any(|c| !c.is_finite()) {
                    return Err(Error::validation(
                        "hamiltonian.drift.value",
                        "must be a non-empty vector of finite numbers",
                    ));
                }
            }
            DriftField::Sinusoidal {
                amplitude,
                frequency,
                phase,
            } => {
                if ![amplitude, frequency, phase].iter().all(|c| c.is_finite()) {
                    return Err(Error::validation(
                        "hamiltonian.drift",
                        "amplitude, frequency and phase must be finite",
                    ));
                }
            }
            DriftField::Tabulated(_) => {}
        }
        Ok(())
    }

    /// Component `i` of `v(x)` together with `d v_i / d x_i` (the fields are diagonal).
    fn component(&self, x: f64, i: usize) -> (f64, f64, f64) {
        match self {
            DriftField::Constant { value } => (value[i], 0.0, 0.0),
            DriftField::Sinusoidal {
                amplitude,
                frequency,
                phase,
            } => {
                let arg = frequency * x + phase;
                (
                    amplitude * arg.sin(),
                    amplitude * frequency * arg.cos(),
                    -amplitude * frequency * frequency * arg.sin(),
                )
            }
            DriftField::Tabulated(t) => t.eval3(x),
        }
    }

    /// `v(x)`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, c)| self.component(*c, i).0)
            .collect()
    }

    /// `v` on the line.
    pub fn eval_1d(&self, x: f64) -> f64 {
        self.component(x, 0).0
    }

    /// Sup norms; exact for the closed forms, dense sampling for tables.
    pub fn bounds(&self) -> DriftBounds {
        match self {
            DriftField::Constant { value } => DriftBounds {
                sup: value.iter().map(|c| c * c).sum::<f64>().sqrt(),
                sup_grad: 0.0,
                sup_hess: 0.0,
            },
            DriftField::Sinusoidal {
                amplitude,
                frequency,
                ..
            } => {
                let a = amplitude.abs();
                let w = frequency.abs();
                DriftBounds {
                    sup: a,
                    sup_grad: a * w,
                    sup_hess: a * w * w,
                }
            }
            DriftField::Tabulated(t) => {
                let k = t.spline.knots();
                let (lo, hi) = (k[0], k[k.len() - 1]);
                let n = 64 * k.len();
                let mut b = DriftBounds {
                    sup: 0.0,
                    sup_grad: 0.0,
                    sup_hess: 0.0,
                };
                for j in 0..=n {
                    let (v, d, dd) = t.eval3(lo + (hi - lo) * j as f64 / n as f64);
                    b.sup = b.sup.max(v.abs());
                    b.sup_grad = b.sup_grad.max(d.abs());
                    b.sup_hess = b.sup_hess.max(dd.abs());
                }
                b
            }
        }
    }
}

/// Built-in Hamiltonian family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum HamiltonianSpec {
    /// `|p|^2 / 2 - v(x) . p`.
    QuadraticDrift { drift: DriftField },
}

impl Default for HamiltonianSpec {
    fn default() -> Self {
        HamiltonianSpec::QuadraticDrift {
            drift: DriftField::zero(),
        }
    }
}

impl HamiltonianSpec {
    pub fn quadratic(drift: DriftField) -> Self {
        HamiltonianSpec::QuadraticDrift { drift }
    }

    pub fn drift(&self) -> &DriftField {
        match self {
            HamiltonianSpec::QuadraticDrift { drift } => drift,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.drift().validate()
    }

    /// Closed-form growth constant `max(1, 1/2 + |v|_inf^2)`.
    pub fn growth_constant(&self) -> f64 {
        let s = self.drift().bounds().sup;
        1f64.max(0.5 + s * s)
    }
}

/// Anything the validator can probe.
pub trait Hamiltonian {
    fn value(&self, p: &[f64], x: &[f64]) -> f64;
    fn grad_p(&self, p: &[f64], x: &[f64]) -> Vec<f64>;
}

impl Hamiltonian for HamiltonianSpec {
    fn value(&self, p: &[f64], x: &[f64]) -> f64 {
        let v = self.drift().eval(x);
        p.iter()
            .zip(&v)
            .map(|(pi, vi)| 0.5 * pi * pi - vi * pi)
            .sum()
    }

    fn grad_p(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let v = self.drift().eval(x);
        p.iter().zip(&v).map(|(pi, vi)| pi - vi).collect()
    }
}

fn check_args(h: &HamiltonianSpec, p: &[f64], x: &[f64]) -> Result<()> {
    if p.len() != x.len() || p.is_empty() {
        return Err(Error::Dimension(format!(
            "p has {} coordinates, x has {}",
            p.len(),
            x.len()
        )));
    }
    if let Some(d) = h.drift().dim() {
        if d != x.len() {
            return Err(Error::Dimension(format!(
                "drift is {d}-dimensional, point has {}",
                x.len()
            )));
        }
    }
    if p.iter().chain(x).any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("non-finite argument".into()));
    }
    Ok(())
}

/// `H(p, x)`.
pub fn eval_h(h: &HamiltonianSpec, p: &[f64], x: &[f64]) -> Result<f64> {
    check_args(h, p, x)?;
    Ok(h.value(p, x))
}

/// `D_p H(p, x) = p - v(x)`.
pub fn grad_p_h(h: &HamiltonianSpec, p: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_args(h, p, x)?;
    Ok(h.grad_p(p, x))
}

/// Sampling controls for [`validate_hamiltonian`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianValidationOptions {
    pub samples: usize,
    pub seed: u64,
    pub dim: usize,
    /// `p` is drawn in `[-p_max, p_max]^dim`.
    pub p_max: f64,
    /// `x` is drawn in `[-x_max, x_max]^dim`.
    pub x_max: f64,
}

impl Default for HamiltonianValidationOptions {
    fn default() -> Self {
        Self {
            samples: 4000,
            seed: 0,
            dim: 1,
            p_max: 10.0,
            x_max: 10.0,
        }
    }
}

/// Tightest sampled constants for the structural inequalities on `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianValidationReport {
    /// Smallest sampled `2 (H(p) - H(q) - D_pH(q).(p-q)) / |p-q|^2`.
    pub convexity_modulus: f64,
    /// `sup -H(p, x)`.
    pub lower_constant: f64,
    /// `sup H(p, x) / (1 + |p|^2)`.
    pub growth_constant: f64,
    /// `sup |D_pH| / (1 + |p|)`.
    pub grad_growth_constant: f64,
    /// `sup |H(p,q) - H(q,x)| / (|p-q| (1 + |p| + |q|))`.
    pub p_lipschitz_constant: f64,
    /// `sup (|H(p,x) - H(p,y)| + |D_pH(p,x) - D_pH(p,y)|) / (|x-y| (1 + |p|))`.
    pub x_lipschitz_constant: f64,
    /// `sup -(H(p,x+h) + H(p,x-h) - 2H(p,x)) / (|h|^2 (1 + |p|))`.
    pub x_semiconvexity_constant: f64,
    pub convex_ok: bool,
    /// Certified constant, infinite when convexity fails.
    pub c0: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Sampled verification of convexity, growth and regularity of `H`.
pub fn validate_hamiltonian(
    h: &dyn Hamiltonian,
    opts: &HamiltonianValidationOptions,
) -> Result<HamiltonianValidationReport> {
    if opts.samples < 1000 {
        return Err(Error::InvalidArgument(format!(
            "validation budget must be >= 1000 samples, got {}",
            opts.samples
        )));
    }
    if opts.dim == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    let d = opts.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let draw = |rng: &mut ChaCha8Rng, s: f64| -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-s..=s)).collect()
    };
    let norm = |a: &[f64]| a.iter().map(|c| c * c).sum::<f64>().sqrt();
    let sub = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p - q).collect() };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(p, q)| p * q).sum() };

    let mut r = HamiltonianValidationReport {
        convexity_modulus: f64::INFINITY,
        lower_constant: f64::NEG_INFINITY,
        growth_constant: f64::NEG_INFINITY,
        grad_growth_constant: 0.0,
        p_lipschitz_constant: 0.0,
        x_lipschitz_constant: 0.0,
        x_semiconvexity_constant: f64::NEG_INFINITY,
        convex_ok: false,
        c0: f64::INFINITY,
        samples: opts.samples,
        seed: opts.seed,
    };
    for _ in 0..opts.samples {
        let p = draw(&mut rng, opts.p_max);
        let q = draw(&mut rng, opts.p_max);
        let x = draw(&mut rng, opts.x_max);
        let y = draw(&mut rng, opts.x_max);
        let hn = 10f64.powf(rng.random_range(-3.0..0.0));
        let e = draw(&mut rng, 1.0);
        let en = norm(&e).max(1e-12);
        let step: Vec<f64> = e.iter().map(|c| c / en * hn).collect();

        let hp = h.value(&p, &x);
        let hq = h.value(&q, &x);
        let gq = h.grad_p(&q, &x);
        let gp = h.grad_p(&p, &x);
        let pq = sub(&p, &q);
        let dpq = norm(&pq);
        if dpq > 1e-3 {
            let bregman = hp - hq - dot(&gq, &pq);
            r.convexity_modulus = r.convexity_modulus.min(2.0 * bregman / (dpq * dpq));
            r.p_lipschitz_constant = r
                .p_lipschitz_constant
                .max((hp - hq).abs() / (dpq * (1.0 + norm(&p) + norm(&q))));
        }
        let np = norm(&p);
        r.lower_constant = r.lower_constant.max(-hp);
        r.growth_constant = r.growth_constant.max(hp / (1.0 + np * np));
        r.grad_growth_constant = r.grad_growth_constant.max(norm(&gp) / (1.0 + np));
        let dxy = norm(&sub(&x, &y));
        if dxy > 1e-8 {
            let num = (hp - h.value(&p, &y)).abs() + norm(&sub(&gp, &h.grad_p(&p, &y)));
            r.x_lipschitz_constant = r.x_lipschitz_constant.max(num / (dxy * (1.0 + np)));
        }
        let xp: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
        let xm: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a - b).collect();
        let second = h.value(&p, &xp) + h.value(&p, &xm) - 2.0 * hp;
        r.x_semiconvexity_constant = r
            .x_semiconvexity_constant
            .max(-second / (hn * hn * (1.0 + np)));
    }
    r.convex_ok = r.convexity_modulus > 0.0;
    if r.convex_ok {
        r.c0 = [
            1.0,
            1.0 / r.convexity_modulus,
            r.lower_constant,
            r.growth_constant,
            r.grad_growth_constant,
            r.p_lipschitz_constant,
            r.x_lipschitz_constant,
            r.x_semiconvexity_constant,
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(c: f64) -> HamiltonianSpec {
        HamiltonianSpec::quadratic(DriftField::Constant { value: vec![c] })
    }

    fn sine() -> HamiltonianSpec {
        HamiltonianSpec::quadratic(DriftField::Sinusoidal {
            amplitude: 1.0,
            frequency: 1.0,
            phase: 0.0,
        })
    }

    struct Concave;

    impl Hamiltonian for Concave {
        fn value(&self, p: &[f64], _x: &[f64]) -> f64 {
            -p.iter().map(|c| c * c).sum::<f64>()
        }
        fn grad_p(&self, p: &[f64], _x: &[f64]) -> Vec<f64> {
            p.iter().map(|c| -2.0 * c).collect()
        }
    }

    #[test]
    fn values() {
        assert_eq!(eval_h(&sine(), &[0.0], &[0.3]).unwrap(), 0.0);
        assert_eq!(eval_h(&constant(0.0), &[1.0], &[0.0]).unwrap(), 0.5);
        assert_eq!(eval_h(&constant(1.0), &[2.0], &[5.0]).unwrap(), 0.0);
        assert_eq!(grad_p_h(&constant(1.0), &[2.0], &[5.0]).unwrap(), vec![1.0]);
        assert_eq!(
            grad_p_h(&constant(0.0), &[-3.5], &[1.0]).unwrap(),
            vec![-3.5]
        );
        let x = [0.7];
        let v = sine().drift().eval(&x);
        assert_eq!(grad_p_h(&sine(), &v, &x).unwrap(), vec![0.0]);
    }

    #[test]
    fn dimension_checked() {
        assert!(eval_h(&constant(1.0), &[1.0, 2.0], &[0.0, 0.0]).is_err());
        assert!(eval_h(&sine(), &[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_drift_has_unit_modulus() {
        let r = validate_hamiltonian(&constant(0.0), &Default::default()).unwrap();
        assert!((r.convexity_modulus - 1.0).abs() < 1e-9);
        assert!(r.convex_ok);
    }

    #[test]
    fn sine_drift_x_lipschitz() {
        let r = validate_hamiltonian(&sine(), &Default::default()).unwrap();
        assert!(r.x_lipschitz_constant <= 1.0 + 1e-9, "{r:?}");
        assert!(r.x_lipschitz_constant > 0.5);
        assert!(r.growth_constant <= sine().growth_constant());
        assert!(r.c0 >= 1.0 && r.c0.is_finite());
    }

    #[test]
    fn concave_hamiltonian_rejected() {
        let r = validate_hamiltonian(&Concave, &Default::default()).unwrap();
        assert!(!r.convex_ok);
        assert!(r.c0.is_infinite());
    }

    #[test]
    fn tabulated_drift_round_trip() {
        let t = TabulatedDrift::new(vec![-2.0, 0.0, 2.0], vec![0.0, 1.0, 0.0]).unwrap();
        let h = HamiltonianSpec::quadratic(DriftField::Tabulated(t));
        let s = toml::to_string(&h).unwrap();
        let back: HamiltonianSpec = toml::from_str(&s).unwrap();
        assert_eq!(back, h);
        assert_eq!(h.drift().eval_1d(5.0), 0.0);
        assert!((h.drift().eval_1d(0.0) - 1.0).abs() < 1e-14);
        let b = h.drift().bounds();
        assert!(b.sup >= 1.0 - 1e-12 && b.sup_grad > 0.0);
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(p in -5.0..5.0f64, x in -5.0..5.0f64, amp in -2.0..2.0f64) {
            let h = HamiltonianSpec::quadratic(DriftField::Sinusoidal { amplitude: amp, frequency: 1.3, phase: 0.2 });
            let e = 1e-6;
            let fd = (eval_h(&h, &[p + e], &[x]).unwrap() - eval_h(&h, &[p - e], &[x]).unwrap()) / (2.0 * e);
            let g = grad_p_h(&h, &[p], &[x]).unwrap()[0];
            prop_assert!((fd - g).abs() <= 1e-8 * g.abs().max(1.0));
        }

        #[test]
        fn quadratic_bregman_identity(p in -5.0..5.0f64, q in -5.0..5.0f64, x in -5.0..5.0f64) {
            let h = sine();
            let lhs = eval_h(&h, &[p], &[x]).unwrap() - eval_h(&h, &[q], &[x]).unwrap()
                - grad_p_h(&h, &[q], &[x]).unwrap()[0] * (p - q);
            prop_assert!((lhs - 0.5 * (p - q) * (p - q)).abs() < 1e-10);
        }

        #[test]
        fn growth_bounds_hold(p in -20.0..20.0f64, x in -20.0..20.0f64) {
            let h = sine();
            let c0 = h.growth_constant();
            let v = eval_h(&h, &[p], &[x]).unwrap();
            prop_assert!(v >= -c0 && v <= c0 * (1.0 + p * p));
        }
    }
}

//! Interaction kernels `k`, the nonlocal coupling `F(x, m) = (k * m)(x)` and
//! its gradients, plus randomized assumption validators and a Gram-matrix
//! positive-semidefiniteness test.
//!
//! Radial kernels use the convention `Dk(0) = 0` at the kink.

mod validate;

use serde::{Deserialize, Serialize};

pub use validate::{
    psd_check, psd_check_points, psd_check_with, validate_coupling, CouplingValidationReport,
    PsdOptions, PsdVerdict, ValidationOptions, Witness,
};

use crate::error::{Error, Result};
use crate::measures::{GridDensity, Layout, ParticleEnsemble};
use crate::numerics::{CubicSpline, SplineEnd};

/// Tabulated radial profile `phi` on `[0, R]`, constant beyond `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CrowdTable", into = "CrowdTable")]
pub struct CrowdProfile {
    spline: CubicSpline,
}

/// Serialized form of [`CrowdProfile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdTable {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

impl CrowdProfile {
    /// `radii` must start at 0 and increase strictly; the spline has zero
    /// slope at both ends.
    pub fn new(radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if radii.first() != Some(&0.0) {
            return Err(Error::validation("kernel.radii", "must start at 0"));
        }
        let spline = CubicSpline::new(
            radii,
            values,
            SplineEnd::Clamped(0.0),
            SplineEnd::Clamped(0.0),
        )
        .map_err(|e| Error::validation("kernel.radii", e.to_string()))?;
        Ok(Self { spline })
    }

    /// Radius beyond which the profile is constant.
    pub fn cutoff(&self) -> f64 {
        *self.spline.knots().last().expect("spline has knots")
    }

    fn eval3(&self, r: f64) -> (f64, f64, f64) {
        if r >= self.cutoff() {
            (
                *self.spline.values().last().expect("spline has knots"),
                0.0,
                0.0,
            )
        } else {
            self.spline.eval3(r)
        }
    }
}

impl TryFrom<CrowdTable> for CrowdProfile {
    type Error = Error;
    fn try_from(t: CrowdTable) -> Result<Self> {
        Self::new(t.radii, t.values)
    }
}

impl From<CrowdProfile> for CrowdTable {
    fn from(p: CrowdProfile) -> Self {
        CrowdTable {
            radii: p.spline.knots().to_vec(),
            values: p.spline.values().to_vec(),
        }
    }
}

/// Interaction kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `k = 0` (no interaction).
    Zero,
    /// `alpha * exp(-a |x|)`.
    Exponential { alpha: f64, a: f64 },
    /// `-|x| exp(-a |x|)`.
    RepulsiveAttractive { a: f64 },
    /// `exp(-|x|) - g exp(-|x| / l)`.
    Morse { g: f64, l: f64 },
    /// Tabulated radial profile.
    CrowdRadial(CrowdProfile),
    /// `|v|^2 / (alpha + |x|^2)^beta` on phase space.
    CuckerSmale { alpha: f64, beta: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = |field: &'static str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(field, format!("must be finite, got {v}")))
            }
        };
        match *self {
            KernelSpec::Zero | KernelSpec::CrowdRadial(_) => Ok(()),
            KernelSpec::Exponential { alpha, a } => {
                finite("kernel.alpha", alpha)?;
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::validation(
                        "kernel.a",
                        format!("must be > 0, got {a}"),
                    ));
                }
                Ok(())
            }
            KernelSpec::RepulsiveAttractive { a } => {
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::validation(
                        "kernel.a",
                        format!("must be > 0, got {a}"),
                    ));
                }
                Ok(())
            }
            KernelSpec::Morse { g, l } => {
                if !(g > 0.0 && g < 1.0) {
                    return Err(Error::validation(
                        "kernel.g",
                        format!("must lie in (0, 1), got {g}"),
                    ));
                }
                if !(l > 1.0 && l.is_finite()) {
                    return Err(Error::validation(
                        "kernel.l",
                        format!("must be > 1, got {l}"),
                    ));
                }
                Ok(())
            }
            KernelSpec::CuckerSmale { alpha, beta } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::validation(
                        "kernel.alpha",
                        format!("must be > 0, got {alpha}"),
                    ));
                }
                if !(beta >= 0.0 && beta.is_finite()) {
                    return Err(Error::validation(
                        "kernel.beta",
                        format!("must be >= 0, got {beta}"),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Zero => "zero",
            KernelSpec::Exponential { .. } => "exponential",
            KernelSpec::RepulsiveAttractive { .. } => "repulsive_attractive",
            KernelSpec::Morse { .. } => "morse",
            KernelSpec::CrowdRadial(_) => "crowd_radial",
            KernelSpec::CuckerSmale { .. } => "cucker_smale",
        }
    }

    /// True for the velocity-dependent kernel.
    pub fn is_phase_space(&self) -> bool {
        matches!(self, KernelSpec::CuckerSmale { .. })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, KernelSpec::Zero)
    }

    /// `(phi, phi', phi'')` at radius `r >= 0` for the radial kernels.
    ///
    /// # Panics
    /// On the phase-space kernel.
    pub fn radial3(&self, r: f64) -> (f64, f64, f64) {
        match *self {
            KernelSpec::Zero => (0.0, 0.0, 0.0),
            KernelSpec::Exponential { alpha, a } => {
                let e = alpha * (-a * r).exp();
                (e, -a * e, a * a * e)
            }
            KernelSpec::RepulsiveAttractive { a } => {
                let e = (-a * r).exp();
                (-r * e, (a * r - 1.0) * e, a * (2.0 - a * r) * e)
            }
            KernelSpec::Morse { g, l } => {
                let e1 = (-r).exp();
                let e2 = g * (-r / l).exp();
                (e1 - e2, -e1 + e2 / l, e1 - e2 / (l * l))
            }
            KernelSpec::CrowdRadial(ref p) => p.eval3(r),
            KernelSpec::CuckerSmale { .. } => panic!("cucker_smale kernel is not radial"),
        }
    }

    /// Derivative of a radial kernel on the line, `phi'(|z|) sign(z)`, zero at `z = 0`.
    pub fn dk_1d(&self, z: f64) -> f64 {
        if z == 0.0 {
            return 0.0;
        }
        let (_, d, _) = self.radial3(z.abs());
        d * z.signum()
    }

    /// Closed-form structural constant of the phase-space kernel: the
    /// smallest `C >= 1` with `g >= 1/C`, `F <= C(1 + |v|^2 + M2v)`,
    /// `|D_x F| <= C F` and `|D_v F| <= C F^(1/2)` guaranteed by the formulas.
    pub fn cucker_smale_constant(&self) -> Option<f64> {
        match *self {
            KernelSpec::CuckerSmale { alpha, beta } => {
                let inv_g = alpha.powf(-beta);
                Some(
                    1f64.max(inv_g)
                        .max(2.0 * inv_g)
                        .max(beta / alpha.sqrt())
                        .max(2.0 * alpha.powf(-beta / 2.0)),
                )
            }
            _ => None,
        }
    }

    /// `g(x) = (alpha + |x|^2)^beta` for the phase-space kernel.
    pub(crate) fn cs_weight(alpha: f64, beta: f64, r2: f64) -> f64 {
        if beta == 0.0 {
            1.0
        } else {
            (alpha + r2).powf(beta)
        }
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum()
}

/// Evaluates `k(x)` or, for the phase-space kernel, `k(x, v)`.
pub fn eval_kernel(k: &KernelSpec, x: &[f64], v: Option<&[f64]>) -> Result<f64> {
    check_query(k, x, v)?;
    Ok(kernel_raw(k, x, v.unwrap_or(&[])))
}

/// Kernel value without argument checks; `v` is ignored for radial kernels.
pub(crate) fn kernel_raw(k: &KernelSpec, x: &[f64], v: &[f64]) -> f64 {
    match *k {
        KernelSpec::CuckerSmale { alpha, beta } => {
            norm2(v) / KernelSpec::cs_weight(alpha, beta, norm2(x))
        }
        KernelSpec::Zero => 0.0,
        _ => k.radial3(norm2(x).sqrt()).0,
    }
}

/// Accumulates `w * D_x k(x)` (and `w * D_v k` for the phase-space kernel).
pub(crate) fn kernel_grad_raw(
    k: &KernelSpec,
    x: &[f64],
    v: &[f64],
    w: f64,
    gx: &mut [f64],
    gv: &mut [f64],
) {
    match *k {
        KernelSpec::Zero => {}
        KernelSpec::CuckerSmale { alpha, beta } => {
            let r2 = norm2(x);
            let g = KernelSpec::cs_weight(alpha, beta, r2);
            let v2 = norm2(v);
            let cx = -v2 * 2.0 * beta / ((alpha + r2) * g);
            for (o, c) in gx.iter_mut().zip(x) {
                *o += w * cx * c;
            }
            for (o, c) in gv.iter_mut().zip(v) {
                *o += w * 2.0 * c / g;
            }
        }
        _ => {
            let r = norm2(x).sqrt();
            if r == 0.0 {
                return;
            }
            let (_, d, _) = k.radial3(r);
            for (o, c) in gx.iter_mut().zip(x) {
                *o += w * d * c / r;
            }
        }
    }
}

fn check_query(k: &KernelSpec, x: &[f64], v: Option<&[f64]>) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Dimension("query point has no coordinates".into()));
    }
    match (k.is_phase_space(), v) {
        (true, None) => Err(Error::InvalidArgument(
            "cucker_smale kernel needs a velocity argument".into(),
        )),
        (false, Some(_)) => Err(Error::InvalidArgument(format!(
            "{} kernel takes no velocity argument",
            k.name()
        ))),
        (true, Some(v)) if v.len() != x.len() => Err(Error::Dimension(format!(
            "position has {} coordinates, velocity has {}",
            x.len(),
            v.len()
        ))),
        _ => Ok(()),
    }
}

/// Either kind of measure accepted by the coupling.
#[derive(Debug, Clone, Copy)]
pub enum MeasureRef<'a> {
    Grid(&'a GridDensity),
    Particles(&'a ParticleEnsemble),
}

impl<'a> From<&'a GridDensity> for MeasureRef<'a> {
    fn from(g: &'a GridDensity) -> Self {
        MeasureRef::Grid(g)
    }
}

impl<'a> From<&'a ParticleEnsemble> for MeasureRef<'a> {
    fn from(p: &'a ParticleEnsemble) -> Self {
        MeasureRef::Particles(p)
    }
}

fn check_measure(k: &KernelSpec, d: usize, m: MeasureRef<'_>) -> Result<()> {
    match m {
        MeasureRef::Grid(_) => {
            if k.is_phase_space() {
                return Err(Error::Dimension(
                    "phase-space kernel needs a phase-space particle ensemble".into(),
                ));
            }
            if d != 1 {
                return Err(Error::Dimension(format!(
                    "grid densities are one-dimensional, query has {d} coordinates"
                )));
            }
        }
        MeasureRef::Particles(p) => {
            let want = if k.is_phase_space() {
                Layout::Phase
            } else {
                Layout::Position
            };
            if p.layout() != want {
                return Err(Error::Dimension(format!(
                    "{} kernel needs a {:?} ensemble, got {:?}",
                    k.name(),
                    want,
                    p.layout()
                )));
            }
            if p.spatial_dim() != d {
                return Err(Error::Dimension(format!(
                    "query has {d} spatial coordinates, ensemble has {}",
                    p.spatial_dim()
                )));
            }
        }
    }
    Ok(())
}

/// `F(x[, v], m) = sum_i w_i k(x - x_i[, v - v_i])`, or the midpoint
/// quadrature of the convolution for a grid density.
pub fn eval_coupling<'a>(
    k: &KernelSpec,
    x: &[f64],
    v: Option<&[f64]>,
    m: impl Into<MeasureRef<'a>>,
) -> Result<f64> {
    check_query(k, x, v)?;
    let m = m.into();
    check_measure(k, x.len(), m)?;
    let d = x.len();
    let mut dx = vec![0.0; d];
    let mut dv = vec![0.0; d];
    let mut total = 0.0;
    for_each_atom(m, |z, w| {
        diff(x, &z[..d], &mut dx);
        if let Some(v) = v {
            diff(v, &z[d..], &mut dv);
        }
        total += w * kernel_raw(k, &dx, &dv);
    });
    Ok(total)
}

/// Gradients of the coupling at a query point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingGradient {
    pub dx: Vec<f64>,
    /// Present for the phase-space kernel only.
    pub dv: Option<Vec<f64>>,
}

/// Analytic `D_x F` and, for the phase-space kernel, `D_v F`.
pub fn grad_coupling<'a>(
    k: &KernelSpec,
    x: &[f64],
    v: Option<&[f64]>,
    m: impl Into<MeasureRef<'a>>,
) -> Result<CouplingGradient> {
    check_query(k, x, v)?;
    let m = m.into();
    check_measure(k, x.len(), m)?;
    let d = x.len();
    let mut dx = vec![0.0; d];
    let mut dv = vec![0.0; d];
    let mut gx = vec![0.0; d];
    let mut gv = vec![0.0; d];
    for_each_atom(m, |z, w| {
        diff(x, &z[..d], &mut dx);
        if let Some(v) = v {
            diff(v, &z[d..], &mut dv);
        }
        kernel_grad_raw(k, &dx, &dv, w, &mut gx, &mut gv);
    });
    Ok(CouplingGradient {
        dx: gx,
        dv: v.map(|_| gv),
    })
}

fn diff(a: &[f64], b: &[f64], out: &mut [f64]) {
    for ((o, p), q) in out.iter_mut().zip(a).zip(b) {
        *o = p - q;
    }
}

fn for_each_atom(m: MeasureRef<'_>, mut f: impl FnMut(&[f64], f64)) {
    match m {
        MeasureRef::Grid(g) => {
            let h = g.spacing();
            for (i, &mass) in g.values().iter().enumerate() {
                if mass != 0.0 {
                    f(&[g.center(i)], mass * h);
                }
            }
        }
        MeasureRef::Particles(p) => {
            for (i, &w) in p.weights().iter().enumerate() {
                f(p.point(i), w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exp11() -> KernelSpec {
        KernelSpec::Exponential { alpha: 1.0, a: 1.0 }
    }

    fn cs() -> KernelSpec {
        KernelSpec::CuckerSmale {
            alpha: 1.0,
            beta: 0.0,
        }
    }

    fn crowd() -> KernelSpec {
        KernelSpec::CrowdRadial(
            CrowdProfile::new(vec![0.0, 0.5, 1.0, 1.5], vec![1.0, 0.7, 0.2, 0.0]).unwrap(),
        )
    }

    fn two_atoms() -> ParticleEnsemble {
        ParticleEnsemble::new(Layout::Phase, 1, vec![0.0, 1.0, 0.0, -1.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(eval_kernel(&exp11(), &[0.0], None).unwrap(), 1.0);
        let morse = KernelSpec::Morse { g: 0.5, l: 2.0 };
        assert!((eval_kernel(&morse, &[0.0], None).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(
            eval_kernel(&cs(), &[3.0, -1.0], Some(&[2.0, 0.0])).unwrap(),
            4.0
        );
    }

    #[test]
    fn velocity_argument_checked() {
        assert!(matches!(
            eval_kernel(&cs(), &[0.0], None),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            eval_kernel(&exp11(), &[0.0], Some(&[1.0])),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn coupling_examples() {
        let y = ParticleEnsemble::dirac(Layout::Position, &[0.3]).unwrap();
        let f = eval_coupling(&exp11(), &[1.0], None, &y).unwrap();
        assert!((f - (-0.7f64).exp()).abs() < 1e-15);
        let d0 = ParticleEnsemble::dirac(Layout::Position, &[0.0]).unwrap();
        let k2 = KernelSpec::Exponential { alpha: 2.0, a: 1.0 };
        assert_eq!(eval_coupling(&k2, &[0.0], None, &d0).unwrap(), 2.0);
        assert_eq!(
            eval_coupling(&cs(), &[0.0], Some(&[1.0]), &two_atoms()).unwrap(),
            2.0
        );
    }

    #[test]
    fn gradient_examples() {
        let at = ParticleEnsemble::dirac(Layout::Position, &[0.4, -0.2]).unwrap();
        for k in [
            exp11(),
            KernelSpec::RepulsiveAttractive { a: 1.0 },
            KernelSpec::Morse { g: 0.5, l: 2.0 },
        ] {
            let g = grad_coupling(&k, &[0.4, -0.2], None, &at).unwrap();
            assert_eq!(g.dx, vec![0.0, 0.0]);
        }
        let g = grad_coupling(&cs(), &[0.0], Some(&[1.0]), &two_atoms()).unwrap();
        assert_eq!(g.dv.unwrap(), vec![2.0]);
        let d0 = ParticleEnsemble::dirac(Layout::Position, &[0.0]).unwrap();
        let g = grad_coupling(&exp11(), &[1.0], None, &d0).unwrap();
        assert!((g.dx[0] + (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let p = ParticleEnsemble::dirac(Layout::Position, &[0.0, 0.0]).unwrap();
        assert!(matches!(
            eval_coupling(&exp11(), &[0.0], None, &p),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            eval_coupling(&cs(), &[0.0, 0.0], Some(&[0.0, 0.0]), &p),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn grid_quadrature_matches_particles() {
        let g = GridDensity::gaussian(-6.0, 0.01, 1200, 0.0, 1.0).unwrap();
        let k = KernelSpec::Morse { g: 0.5, l: 2.0 };
        let fg = eval_coupling(&k, &[0.37], None, &g).unwrap();
        let coords: Vec<f64> = (0..g.len()).map(|i| g.center(i)).collect();
        let weights: Vec<f64> = g.values().iter().map(|v| v * g.spacing()).collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let p = ParticleEnsemble::new(Layout::Position, 1, coords, weights).unwrap();
        let fp = eval_coupling(&k, &[0.37], None, &p).unwrap();
        assert!((fg - fp).abs() < 1e-9);
    }

    #[test]
    fn crowd_profile_is_flat_past_cutoff() {
        let k = crowd();
        assert_eq!(k.radial3(2.0), (0.0, 0.0, 0.0));
        let (v, d, _) = k.radial3(1.5 - 1e-9);
        assert!(v.abs() < 1e-8 && d.abs() < 1e-7);
        assert!(k.radial3(0.0).1.abs() < 1e-15);
    }

    #[test]
    fn kernel_serde_round_trip() {
        for k in [
            KernelSpec::Zero,
            exp11(),
            KernelSpec::Morse { g: 0.5, l: 2.0 },
            crowd(),
            cs(),
        ] {
            let s = toml::to_string(&k).unwrap();
            let back: KernelSpec = toml::from_str(&s).unwrap();
            assert_eq!(back, k);
        }
    }

    #[test]
    fn parameter_invariants() {
        assert!(KernelSpec::Morse { g: 1.0, l: 2.0 }.validate().is_err());
        assert!(KernelSpec::Morse { g: 0.5, l: 1.0 }.validate().is_err());
        assert!(KernelSpec::Exponential {
            alpha: -1.0,
            a: 0.0
        }
        .validate()
        .is_err());
        assert!(KernelSpec::Exponential {
            alpha: -1.0,
            a: 1.0
        }
        .validate()
        .is_ok());
        assert!(KernelSpec::CuckerSmale {
            alpha: 0.0,
            beta: 1.0
        }
        .validate()
        .is_err());
        assert_eq!(cs().cucker_smale_constant(), Some(2.0));
    }

    fn radial_kernels() -> impl Strategy<Value = KernelSpec> {
        prop_oneof![
            (-2.0..2.0f64, 0.2..3.0f64).prop_map(|(alpha, a)| KernelSpec::Exponential { alpha, a }),
            (0.2..3.0f64).prop_map(|a| KernelSpec::RepulsiveAttractive { a }),
            (0.05..0.95f64, 1.1..5.0f64).prop_map(|(g, l)| KernelSpec::Morse { g, l }),
            Just(crowd()),
        ]
    }

    fn cs_kernels() -> impl Strategy<Value = KernelSpec> {
        (0.2..3.0f64, 0.0..2.0f64).prop_map(|(alpha, beta)| KernelSpec::CuckerSmale { alpha, beta })
    }

    fn atoms(width: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..6).prop_flat_map(move |n| {
            (
                prop::collection::vec(-3.0..3.0f64, n * width),
                prop::collection::vec(0.05..1.0f64, n),
            )
        })
    }

    fn normalized(w: Vec<f64>) -> Vec<f64> {
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn kernels_are_even(k in radial_kernels(), x in prop::collection::vec(-5.0..5.0f64, 1..4)) {
            let neg: Vec<f64> = x.iter().map(|c| -c).collect();
            prop_assert_eq!(eval_kernel(&k, &x, None).unwrap(), eval_kernel(&k, &neg, None).unwrap());
        }

        #[test]
        fn phase_kernel_is_even(k in cs_kernels(), z in prop::collection::vec(-5.0..5.0f64, 4)) {
            let neg: Vec<f64> = z.iter().map(|c| -c).collect();
            prop_assert_eq!(
                eval_kernel(&k, &z[..2], Some(&z[2..])).unwrap(),
                eval_kernel(&k, &neg[..2], Some(&neg[2..])).unwrap()
            );
        }

        #[test]
        fn gradient_matches_finite_differences(
            k in radial_kernels(),
            (coords, w) in atoms(2),
            x in prop::collection::vec(-4.0..4.0f64, 2),
        ) {
            let m = ParticleEnsemble::new(Layout::Position, 2, coords, normalized(w)).unwrap();
            let h = 1e-5;
            let min_dist = (0..m.len()).map(|i| crate::measures::dist(&x, m.position(i))).fold(f64::INFINITY, f64::min);
            prop_assume!(min_dist > 10.0 * h);
            let g = grad_coupling(&k, &x, None, &m).unwrap();
            let scale = g.dx.iter().map(|c| c.abs()).fold(0.0, f64::max);
            prop_assume!(scale > 1e-4);
            for j in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (eval_coupling(&k, &xp, None, &m).unwrap() - eval_coupling(&k, &xm, None, &m).unwrap()) / (2.0 * h);
                prop_assert!((fd - g.dx[j]).abs() <= 1e-6 * scale, "fd {} analytic {}", fd, g.dx[j]);
            }
        }

        #[test]
        fn phase_gradient_matches_finite_differences(
            k in cs_kernels(),
            (coords, w) in atoms(2),
            z in prop::collection::vec(-3.0..3.0f64, 2),
        ) {
            let m = ParticleEnsemble::new(Layout::Phase, 1, coords, normalized(w)).unwrap();
            let h = 1e-5;
            let g = grad_coupling(&k, &z[..1], Some(&z[1..]), &m).unwrap();
            let f = |x: f64, v: f64| eval_coupling(&k, &[x], Some(&[v]), &m).unwrap();
            let fdx = (f(z[0] + h, z[1]) - f(z[0] - h, z[1])) / (2.0 * h);
            let fdv = (f(z[0], z[1] + h) - f(z[0], z[1] - h)) / (2.0 * h);
            let scale = g.dx[0].abs().max(g.dv.as_ref().unwrap()[0].abs()).max(1e-3);
            prop_assert!((fdx - g.dx[0]).abs() <= 1e-6 * scale);
            prop_assert!((fdv - g.dv.unwrap()[0]).abs() <= 1e-6 * scale);
        }

        #[test]
        fn velocity_gradient_sums_to_zero(k in cs_kernels(), (coords, w) in atoms(4)) {
            let m = ParticleEnsemble::new(Layout::Phase, 2, coords, normalized(w)).unwrap();
            let mut total = [0.0; 2];
            for i in 0..m.len() {
                let g = grad_coupling(&k, m.position(i), m.velocity(i), &m).unwrap();
                let dv = g.dv.unwrap();
                total[0] += m.weights()[i] * dv[0];
                total[1] += m.weights()[i] * dv[1];
            }
            prop_assert!(total[0].abs() < 1e-12 && total[1].abs() < 1e-12);
        }

        #[test]
        fn coupling_is_linear_in_measure(
            k in radial_kernels(),
            (c1, w1) in atoms(1),
            (c2, w2) in atoms(1),
            theta in 0.0..1.0f64,
            x in -4.0..4.0f64,
        ) {
            let w1 = normalized(w1);
            let w2 = normalized(w2);
            let m1 = ParticleEnsemble::new(Layout::Position, 1, c1.clone(), w1.clone()).unwrap();
            let m2 = ParticleEnsemble::new(Layout::Position, 1, c2.clone(), w2.clone()).unwrap();
            let mut coords = c1;
            coords.extend(c2);
            let mut weights: Vec<f64> = w1.iter().map(|w| theta * w).collect();
            weights.extend(w2.iter().map(|w| (1.0 - theta) * w));
            let total: f64 = weights.iter().sum();
            prop_assume!((total - 1.0).abs() < 1e-13);
            let mix = ParticleEnsemble::new(Layout::Position, 1, coords, weights).unwrap();
            let lhs = eval_coupling(&k, &[x], None, &mix).unwrap();
            let rhs = theta * eval_coupling(&k, &[x], None, &m1).unwrap()
                + (1.0 - theta) * eval_coupling(&k, &[x], None, &m2).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn phase_coupling_bounds(k in cs_kernels(), (coords, w) in atoms(2), z in prop::collection::vec(-3.0..3.0f64, 2)) {
            use crate::measures::{Component, Moment2};
            let m = ParticleEnsemble::new(Layout::Phase, 1, coords, normalized(w)).unwrap();
            let c0 = k.cucker_smale_constant().unwrap();
            let f = eval_coupling(&k, &z[..1], Some(&z[1..]), &m).unwrap();
            let m2 = m.moment2(Component::Velocity).unwrap();
            prop_assert!(f >= 0.0);
            prop_assert!(f <= c0 * (1.0 + z[1] * z[1] + m2) * (1.0 + 1e-12));
            let g = grad_coupling(&k, &z[..1], Some(&z[1..]), &m).unwrap();
            prop_assert!(g.dx[0].abs() <= c0 * f * (1.0 + 1e-12) + 1e-300);
            prop_assert!(g.dv.unwrap()[0].abs() <= c0 * f.sqrt() * (1.0 + 1e-12) + 1e-300);
        }
    }
}

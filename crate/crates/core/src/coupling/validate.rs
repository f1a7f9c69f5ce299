use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{kernel_grad_raw, kernel_raw, KernelSpec};
use crate::error::{Error, Result};

/// Sampling controls for [`validate_coupling`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    /// Number of sample triples `(x, h, m)`; at least 1000.
    pub samples: usize,
    pub seed: u64,
    /// Spatial dimension of the samples.
    pub dim: usize,
    /// Atoms are drawn in `[-radius, radius]^dim`.
    pub radius: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            samples: 4000,
            seed: 0,
            dim: 1,
            radius: 5.0,
        }
    }
}

/// Sample attaining the largest ratio for a failed (or tightest) check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub check: String,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Distance from `x` to the nearest atom.
    pub offset_from_atom: f64,
    pub ratio: f64,
}

/// Outcome of the randomized assumption checks.
///
/// For position kernels the flags refer to linear growth, Lipschitz
/// continuity and semiconcavity of `F(., m)`. For the phase-space kernel they
/// refer to `0 <= F <= C(1 + |v|^2 + M2v)` (growth), `|D_x F| <= C F` and
/// `|D_v F| <= C F^(1/2)` (lipschitz) and `g >= 1/C` (semiconcave slot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingValidationReport {
    pub kernel: String,
    pub c0: f64,
    pub lipschitz_constant: f64,
    pub growth_constant: f64,
    pub semiconcavity_constant: f64,
    pub lipschitz_ok: bool,
    pub growth_ok: bool,
    pub semiconcave_ok: bool,
    /// Closed-form constant, when one is known.
    pub analytic_c0: Option<f64>,
    pub witnesses: Vec<Witness>,
    pub samples: usize,
    pub seed: u64,
    pub note: String,
}

impl CouplingValidationReport {
    pub fn all_ok(&self) -> bool {
        self.lipschitz_ok && self.growth_ok && self.semiconcave_ok
    }
}

const CONTINUITY_NOTE: &str =
    "a pass means no counterexample at this budget; continuity in the measure \
argument is only exercised along the sampled ensembles";

/// Ratio between small-step and large-step band maxima beyond which a
/// difference quotient is deemed unbounded.
const BLOWUP_RATIO: f64 = 10.0;

#[derive(Default)]
struct Band {
    max: f64,
    arg: Option<Witness>,
}

impl Band {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            arg: None,
        }
    }

    fn offer(&mut self, ratio: f64, make: impl FnOnce() -> Witness) {
        if ratio > self.max {
            self.max = ratio;
            self.arg = Some(make());
        }
    }
}

struct Sample {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl Sample {
    fn random(rng: &mut ChaCha8Rng, n: usize, width: usize, radius: f64) -> Self {
        let atoms = (0..n)
            .map(|_| {
                (0..width)
                    .map(|_| rng.random_range(-radius..=radius))
                    .collect()
            })
            .collect();
        let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
        let s: f64 = raw.iter().sum();
        Self {
            atoms,
            weights: raw.iter().map(|w| w / s).collect(),
        }
    }

    fn nearest(&self, x: &[f64]) -> f64 {
        self.atoms
            .iter()
            .map(|a| crate::measures::dist(&a[..x.len().min(a.len())], &x[..x.len().min(a.len())]))
            .fold(f64::INFINITY, f64::min)
    }

    fn coupling(&self, k: &KernelSpec, x: &[f64]) -> f64 {
        let mut d = vec![0.0; x.len()];
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| {
                for ((o, p), q) in d.iter_mut().zip(x).zip(a) {
                    *o = p - q;
                }
                w * kernel_raw(k, &d, &[])
            })
            .sum()
    }
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = z.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-12 {
            return z.iter().map(|c| c / n).collect();
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo..hi))
}

/// Randomized check of the growth, Lipschitz and semiconcavity assumptions.
///
/// Each difference quotient is sampled at step sizes spanning six decades; a
/// quotient whose small-step band maximum exceeds the large-step band maximum
/// by a factor of [`BLOWUP_RATIO`] is reported as unbounded.
pub fn validate_coupling(
    k: &KernelSpec,
    opts: &ValidationOptions,
) -> Result<CouplingValidationReport> {
    k.validate()?;
    if opts.samples < 1000 {
        return Err(Error::InvalidArgument(format!(
            "validation budget must be >= 1000 samples, got {}",
            opts.samples
        )));
    }
    if opts.dim == 0 || !(opts.radius > 0.0) {
        return Err(Error::InvalidArgument(
            "validation needs dim >= 1 and radius > 0".into(),
        ));
    }
    if k.is_phase_space() {
        Ok(validate_phase(k, opts))
    } else {
        Ok(validate_position(k, opts))
    }
}

fn validate_position(k: &KernelSpec, opts: &ValidationOptions) -> CouplingValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let d = opts.dim;
    let r = opts.radius;
    let (mut sc_small, mut sc_large, mut sc_all) = (Band::new(), Band::new(), Band::new());
    let (mut lip_small, mut lip_large, mut lip_all) = (Band::new(), Band::new(), Band::new());
    let (mut growth_in, mut growth_out) = (Band::new(), Band::new());

    for s in 0..opts.samples {
        let m = if s % 4 == 0 {
            Sample {
                atoms: vec![vec![0.0; d]],
                weights: vec![1.0],
            }
        } else {
            let n = rng.random_range(1..=4);
            Sample::random(&mut rng, n, d, r)
        };
        let x: Vec<f64> = if s % 2 == 0 {
            let a = &m.atoms[rng.random_range(0..m.atoms.len())];
            let off = log_uniform(&mut rng, -7.0, 0.0);
            let u = unit(&mut rng, d);
            a.iter().zip(&u).map(|(c, e)| c + off * e).collect()
        } else {
            (0..d)
                .map(|_| rng.random_range(-(r + 1.0)..=(r + 1.0)))
                .collect()
        };
        let hn = log_uniform(&mut rng, -6.0, 0.0);
        let h: Vec<f64> = unit(&mut rng, d).iter().map(|e| e * hn).collect();
        let xp: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a + b).collect();
        let xm: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a - b).collect();
        let f0 = m.coupling(k, &x);
        let fp = m.coupling(k, &xp);
        let fm = m.coupling(k, &xm);
        let q_sc = (fp + fm - 2.0 * f0) / (hn * hn);
        let q_lip = (fp - f0).abs().max((fm - f0).abs()) / hn;
        let witness = |check: &str, ratio: f64| Witness {
            check: check.into(),
            x: x.clone(),
            h: h.clone(),
            atoms: m.atoms.clone(),
            weights: m.weights.clone(),
            offset_from_atom: m.nearest(&x),
            ratio,
        };
        sc_all.offer(q_sc, || witness("semiconcavity", q_sc));
        lip_all.offer(q_lip, || witness("lipschitz", q_lip));
        if hn < 1e-4 {
            sc_small.offer(q_sc, || witness("semiconcavity", q_sc));
            lip_small.offer(q_lip, || witness("lipschitz", q_lip));
        } else if hn > 1e-2 {
            sc_large.offer(q_sc, || witness("semiconcavity", q_sc));
            lip_large.offer(q_lip, || witness("lipschitz", q_lip));
        }

        let far = log_uniform(&mut rng, -1.0, 2.0) * r;
        let xg: Vec<f64> = unit(&mut rng, d).iter().map(|e| e * far).collect();
        let q_g = m.coupling(k, &xg).abs() / (1.0 + far);
        let band = if far > 5.0 * r {
            &mut growth_out
        } else {
            &mut growth_in
        };
        band.offer(q_g, || Witness {
            check: "growth".into(),
            x: xg.clone(),
            h: vec![0.0; d],
            atoms: m.atoms.clone(),
            weights: m.weights.clone(),
            offset_from_atom: m.nearest(&xg),
            ratio: q_g,
        });
    }

    let semiconcave_ok = sc_small.max <= BLOWUP_RATIO * sc_large.max.max(1.0);
    let lipschitz_ok = lip_small.max <= BLOWUP_RATIO * lip_large.max.max(1.0);
    let growth_ok =
        growth_out.max.is_finite() && growth_out.max <= BLOWUP_RATIO * growth_in.max.max(1.0);
    let mut witnesses = Vec::new();
    if !semiconcave_ok {
        witnesses.extend(sc_small.arg.take());
    }
    if !lipschitz_ok {
        witnesses.extend(lip_small.arg.take());
    }
    if !growth_ok {
        witnesses.extend(growth_out.arg.take());
    }
    let growth = growth_in.max.max(growth_out.max);
    let c0 = 1f64.max(lip_all.max).max(growth).max(sc_all.max);
    CouplingValidationReport {
        kernel: k.name().into(),
        c0,
        lipschitz_constant: lip_all.max,
        growth_constant: growth,
        semiconcavity_constant: sc_all.max,
        lipschitz_ok,
        growth_ok,
        semiconcave_ok,
        analytic_c0: None,
        witnesses,
        samples: opts.samples,
        seed: opts.seed,
        note: CONTINUITY_NOTE.into(),
    }
}

fn validate_phase(k: &KernelSpec, opts: &ValidationOptions) -> CouplingValidationReport {
    let KernelSpec::CuckerSmale { alpha, beta } = *k else {
        unreachable!("phase validation on a position kernel")
    };
    let analytic = k.cucker_smale_constant().expect("phase kernel");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let d = opts.dim;
    let r = opts.radius;
    let (mut growth, mut dx_ratio, mut dv_ratio, mut inv_g) =
        (Band::new(), Band::new(), Band::new(), Band::new());
    let mut negative = false;
    let mut dz = vec![0.0; 2 * d];

    for s in 0..opts.samples {
        let n = rng.random_range(1..=4);
        let scale = log_uniform(&mut rng, -1.0, 1.0);
        let mut m = Sample::random(&mut rng, n, 2 * d, r);
        for a in &mut m.atoms {
            for c in &mut a[d..] {
                *c *= scale / r;
            }
        }
        let mut z: Vec<f64> = (0..d).map(|_| rng.random_range(-r..=r)).collect();
        if s % 3 == 0 {
            let a = &m.atoms[0];
            let stretch = log_uniform(&mut rng, 0.0, 3.0);
            z.extend(a[d..].iter().map(|c| -c * stretch));
        } else {
            z.extend((0..d).map(|_| {
                let n: f64 = StandardNormal.sample(&mut rng);
                scale * n
            }));
        }
        let mut f = 0.0;
        let mut gx = vec![0.0; d];
        let mut gv = vec![0.0; d];
        let mut m2 = 0.0;
        for (a, w) in m.atoms.iter().zip(&m.weights) {
            for ((o, p), q) in dz.iter_mut().zip(&z).zip(a) {
                *o = p - q;
            }
            f += w * kernel_raw(k, &dz[..d], &dz[d..]);
            kernel_grad_raw(k, &dz[..d], &dz[d..], *w, &mut gx, &mut gv);
            m2 += w * a[d..].iter().map(|c| c * c).sum::<f64>();
            let r2: f64 = dz[..d].iter().map(|c| c * c).sum();
            let ig = 1.0 / KernelSpec::cs_weight(alpha, beta, r2);
            inv_g.offer(ig, || witness_phase("weight_lower_bound", &z, &m, ig));
        }
        negative |= f < 0.0;
        let v2: f64 = z[d..].iter().map(|c| c * c).sum();
        let q = f / (1.0 + v2 + m2);
        growth.offer(q, || witness_phase("growth", &z, &m, q));
        if f > 1e-300 {
            let qx = gx.iter().map(|c| c * c).sum::<f64>().sqrt() / f;
            let qv = gv.iter().map(|c| c * c).sum::<f64>().sqrt() / f.sqrt();
            dx_ratio.offer(qx, || witness_phase("position_gradient", &z, &m, qx));
            dv_ratio.offer(qv, || witness_phase("velocity_gradient", &z, &m, qv));
        }
    }
    // x at the minimum of g is hit exactly only by chance; include it.
    inv_g.offer(1.0 / KernelSpec::cs_weight(alpha, beta, 0.0), || Witness {
        check: "weight_lower_bound".into(),
        x: vec![0.0; d],
        h: vec![],
        atoms: vec![],
        weights: vec![],
        offset_from_atom: 0.0,
        ratio: 1.0 / KernelSpec::cs_weight(alpha, beta, 0.0),
    });

    let tol = analytic * (1.0 + 1e-9);
    let growth_ok = !negative && growth.max <= tol;
    let lipschitz_ok = dx_ratio.max <= tol && dv_ratio.max <= tol;
    let semiconcave_ok = inv_g.max <= tol;
    let mut witnesses = Vec::new();
    if !growth_ok {
        witnesses.extend(growth.arg.take());
    }
    if !lipschitz_ok {
        witnesses.extend(dx_ratio.arg.take());
        witnesses.extend(dv_ratio.arg.take());
    }
    if !semiconcave_ok {
        witnesses.extend(inv_g.arg.take());
    }
    let lipschitz = dx_ratio.max.max(dv_ratio.max);
    CouplingValidationReport {
        kernel: k.name().into(),
        c0: 1f64.max(lipschitz).max(growth.max).max(inv_g.max),
        lipschitz_constant: lipschitz,
        growth_constant: growth.max,
        semiconcavity_constant: inv_g.max,
        lipschitz_ok,
        growth_ok,
        semiconcave_ok,
        analytic_c0: Some(analytic),
        witnesses,
        samples: opts.samples,
        seed: opts.seed,
        note: CONTINUITY_NOTE.into(),
    }
}

fn witness_phase(check: &str, z: &[f64], m: &Sample, ratio: f64) -> Witness {
    let d = z.len() / 2;
    Witness {
        check: check.into(),
        x: z[..d].to_vec(),
        h: z[d..].to_vec(),
        atoms: m.atoms.clone(),
        weights: m.weights.clone(),
        offset_from_atom: m.nearest(z),
        ratio,
    }
}

/// Point-cloud controls for [`psd_check_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdOptions {
    /// Spatial dimension; phase-space kernels draw `2 * dim` coordinates.
    pub dim: usize,
    /// Points are uniform in `[-radius, radius]`.
    pub radius: f64,
}

impl Default for PsdOptions {
    fn default() -> Self {
        Self {
            dim: 1,
            radius: 20.0,
        }
    }
}

/// Verdict of the Gram-matrix test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum PsdVerdict {
    PsdConsistent {
        min_eigenvalue: f64,
        norm: f64,
    },
    NotPsd {
        min_eigenvalue: f64,
        norm: f64,
        witness: Vec<Vec<f64>>,
    },
}

impl PsdVerdict {
    pub fn is_psd(&self) -> bool {
        matches!(self, PsdVerdict::PsdConsistent { .. })
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            PsdVerdict::PsdConsistent { min_eigenvalue, .. }
            | PsdVerdict::NotPsd { min_eigenvalue, .. } => *min_eigenvalue,
        }
    }
}

/// Gram-matrix test on `n_points` random points with default options.
pub fn psd_check(k: &KernelSpec, n_points: usize, seed: u64) -> Result<PsdVerdict> {
    psd_check_with(k, n_points, seed, &PsdOptions::default())
}

pub fn psd_check_with(
    k: &KernelSpec,
    n_points: usize,
    seed: u64,
    opts: &PsdOptions,
) -> Result<PsdVerdict> {
    if !(2..=512).contains(&n_points) {
        return Err(Error::InvalidArgument(format!(
            "psd check needs between 2 and 512 points, got {n_points}"
        )));
    }
    let width = if k.is_phase_space() {
        2 * opts.dim
    } else {
        opts.dim
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..n_points)
        .map(|_| {
            (0..width)
                .map(|_| rng.random_range(-opts.radius..=opts.radius))
                .collect()
        })
        .collect();
    psd_check_points(k, &points)
}

/// Gram-matrix test on explicit points (phase-space points are `[x..., v...]`).
///
/// Passes when the smallest eigenvalue is at least `-1e-10` times the
/// spectral norm.
pub fn psd_check_points(k: &KernelSpec, points: &[Vec<f64>]) -> Result<PsdVerdict> {
    k.validate()?;
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "psd check needs at least 2 points".into(),
        ));
    }
    let width = points[0].len();
    if width == 0
        || points.iter().any(|p| p.len() != width)
        || (k.is_phase_space() && !width.is_multiple_of(2))
    {
        return Err(Error::Dimension(
            "psd points must share a valid width".into(),
        ));
    }
    let d = if k.is_phase_space() { width / 2 } else { width };
    let mut diff = vec![0.0; width];
    let gram = DMatrix::from_fn(n, n, |i, j| {
        for ((o, a), b) in diff.iter_mut().zip(&points[i]).zip(&points[j]) {
            *o = a - b;
        }
        kernel_raw(k, &diff[..d], &diff[d..])
    });
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let norm = eig.iter().map(|e| e.abs()).fold(0.0, f64::max);
    Ok(if min >= -1e-10 * norm {
        PsdVerdict::PsdConsistent {
            min_eigenvalue: min,
            norm,
        }
    } else {
        PsdVerdict::NotPsd {
            min_eigenvalue: min,
            norm,
            witness: points.to_vec(),
        }
    })
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::grid::{GridDensity, MAX_REBIN_CELLS};
use super::particles::{dist, ParticleEnsemble};
use super::transport::min_cost_transport;
use crate::error::{Error, Result};

/// Exact transport is refused above this many atom pairs.
pub const EXACT_PAIR_CAP: usize = 1 << 18;

/// Number of random projections used by sliced mode unless told otherwise.
pub const DEFAULT_SLICES: usize = 64;

/// How [`wasserstein1_particles`] evaluates the distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum W1Mode {
    /// Solves the discrete transport problem (sorted CDFs in one dimension).
    Exact,
    /// Averages 1D distances over random unit directions drawn from `seed`.
    /// Projections are 1-Lipschitz, so this never exceeds the exact value.
    Sliced { slices: usize, seed: u64 },
}

impl W1Mode {
    pub fn sliced(seed: u64) -> Self {
        W1Mode::Sliced {
            slices: DEFAULT_SLICES,
            seed,
        }
    }
}

/// `int |F_a - F_b| dx` for two grid densities.
///
/// Densities on different grids are first rebinned onto a common grid whose
/// spacing is the finer of the two and whose extent covers both.
pub fn wasserstein1_1d(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    if a.same_grid(b) {
        return Ok(cdf_gap_same_grid(a, b));
    }
    let spacing = a.spacing().min(b.spacing());
    let lo = a.origin().min(b.origin());
    let hi = a.right_edge().max(b.right_edge());
    let cells = ((hi - lo) / spacing - 1e-9).ceil();
    if !(cells.is_finite() && cells >= 1.0 && cells <= MAX_REBIN_CELLS as f64) {
        return Err(Error::Grid(format!(
            "grids [{}, {}] dx={} and [{}, {}] dx={} cannot be resampled onto a common grid",
            a.origin(),
            a.right_edge(),
            a.spacing(),
            b.origin(),
            b.right_edge(),
            b.spacing()
        )));
    }
    let n = cells as usize;
    let ra = a.rebin(lo, spacing, n)?;
    let rb = b.rebin(lo, spacing, n)?;
    Ok(cdf_gap_same_grid(&ra, &rb))
}

fn cdf_gap_same_grid(a: &GridDensity, b: &GridDensity) -> f64 {
    w1_same_grid(a.values(), b.values(), a.spacing())
}

/// W1 between two cell-average vectors on one grid of spacing `dx`.
pub(crate) fn w1_same_grid(a: &[f64], b: &[f64], dx: f64) -> f64 {
    let mut fa = 0.0;
    let mut fb = 0.0;
    let mut total = 0.0;
    for (va, vb) in a.iter().zip(b) {
        let d0 = fa - fb;
        fa += va * dx;
        fb += vb * dx;
        total += abs_linear_integral(d0, fa - fb, dx);
    }
    total
}

/// `int_0^h |l(s)| ds` for the linear `l` with `l(0)=y0`, `l(h)=y1`.
fn abs_linear_integral(y0: f64, y1: f64, h: f64) -> f64 {
    if y0 * y1 >= 0.0 {
        0.5 * h * (y0.abs() + y1.abs())
    } else {
        0.5 * h * (y0 * y0 + y1 * y1) / (y0.abs() + y1.abs())
    }
}

/// Exact 1D distance between a grid density and a position-space ensemble in
/// one dimension (piecewise-linear CDF against a step CDF).
pub fn wasserstein1_grid_particles(g: &GridDensity, p: &ParticleEnsemble) -> Result<f64> {
    if p.dim_total() != 1 {
        return Err(Error::Dimension(format!(
            "grid densities are 1D; ensemble has {} coordinates per atom",
            p.dim_total()
        )));
    }
    let mut atoms: Vec<(f64, f64)> = (0..p.len())
        .map(|i| (p.point(i)[0], p.weights()[i]))
        .collect();
    atoms.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let cdf = g.cdf_at_edges();
    let grid_cdf = |x: f64| -> f64 {
        if x <= g.origin() {
            return 0.0;
        }
        if x >= g.right_edge() {
            return cdf[g.len()];
        }
        let s = (x - g.origin()) / g.spacing();
        let k = (s.floor() as usize).min(g.len() - 1);
        let frac = s - k as f64;
        cdf[k] + frac * (cdf[k + 1] - cdf[k])
    };

    let mut breaks: Vec<f64> = (0..=g.len()).map(|i| g.edge(i)).collect();
    breaks.extend(atoms.iter().map(|a| a.0));
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
    breaks.dedup();

    let mut total = 0.0;
    let mut k = 0;
    let mut step = 0.0;
    for w in breaks.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        while k < atoms.len() && atoms[k].0 <= s0 {
            step += atoms[k].1;
            k += 1;
        }
        total += abs_linear_integral(grid_cdf(s0) - step, grid_cdf(s1) - step, s1 - s0);
    }
    Ok(total)
}

/// W1 between two ensembles of the same layout and dimension.
pub fn wasserstein1_particles(
    a: &ParticleEnsemble,
    b: &ParticleEnsemble,
    mode: W1Mode,
) -> Result<f64> {
    if a.dim_total() != b.dim_total() || a.layout() != b.layout() {
        return Err(Error::Dimension(format!(
            "ensembles have {} and {} coordinates per atom",
            a.dim_total(),
            b.dim_total()
        )));
    }
    let width = a.dim_total();
    if width == 1 {
        let pa: Vec<(f64, f64)> = (0..a.len())
            .map(|i| (a.point(i)[0], a.weights()[i]))
            .collect();
        let pb: Vec<(f64, f64)> = (0..b.len())
            .map(|i| (b.point(i)[0], b.weights()[i]))
            .collect();
        return Ok(atoms_1d(pa, pb));
    }
    match mode {
        W1Mode::Exact => {
            let pairs = a.len().saturating_mul(b.len());
            if pairs > EXACT_PAIR_CAP {
                return Err(Error::ModeRequired {
                    pairs,
                    cap: EXACT_PAIR_CAP,
                });
            }
            let mut cost = Vec::with_capacity(pairs);
            for i in 0..a.len() {
                for j in 0..b.len() {
                    cost.push(dist(a.point(i), b.point(j)));
                }
            }
            Ok(min_cost_transport(a.weights(), b.weights(), &cost))
        }
        W1Mode::Sliced { slices, seed } => {
            if slices == 0 {
                return Err(Error::InvalidArgument(
                    "sliced mode needs >= 1 slice".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = 0.0;
            for _ in 0..slices {
                let dir = random_direction(width, &mut rng);
                let project = |e: &ParticleEnsemble| -> Vec<(f64, f64)> {
                    (0..e.len())
                        .map(|i| {
                            let z: f64 = e.point(i).iter().zip(&dir).map(|(c, u)| c * u).sum();
                            (z, e.weights()[i])
                        })
                        .collect()
                };
                acc += atoms_1d(project(a), project(b));
            }
            Ok(acc / slices as f64)
        }
    }
}

fn random_direction(width: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..width).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

/// `int |F_a - F_b|` for two weighted atom sets on the line.
fn atoms_1d(mut a: Vec<(f64, f64)>, mut b: Vec<(f64, f64)>) -> f64 {
    a.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    b.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut events: Vec<(f64, f64)> = a
        .iter()
        .copied()
        .chain(b.iter().map(|(x, w)| (*x, -w)))
        .collect();
    events.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut gap = 0.0;
    let mut total = 0.0;
    for w in events.windows(2) {
        gap += w[0].1;
        total += gap.abs() * (w[1].0 - w[0].0);
    }
    total
}

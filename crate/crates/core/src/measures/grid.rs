use rand::Rng;
use serde::{Deserialize, Serialize};

use super::particles::{Layout, ParticleEnsemble};
use crate::error::{Error, Result};

/// Largest cell count a rebinning target may have.
pub const MAX_REBIN_CELLS: usize = 1 << 22;

/// A probability density on a uniform 1D grid, stored as cell averages.
///
/// Cell `i` covers `[origin + i*dx, origin + (i+1)*dx)`; the mass of the
/// cell is `dx * values[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    origin: f64,
    spacing: f64,
    values: Vec<f64>,
}

/// A real function sampled at the cell centers of a uniform 1D grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub origin: f64,
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn center(&self, i: usize) -> f64 {
        self.origin + (i as f64 + 0.5) * self.spacing
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// How atoms are drawn from a grid density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Independent draws through the inverse CDF.
    #[default]
    Iid,
    /// One draw per quantile stratum `[i/N, (i+1)/N)`.
    Stratified,
}

impl GridDensity {
    /// Tolerance on `dx * sum(values) = 1`.
    pub const MASS_TOL: f64 = 1e-10;

    pub fn new(origin: f64, spacing: f64, values: Vec<f64>) -> Result<Self> {
        check_grid(origin, spacing, values.len())?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidMeasure(format!(
                "cell {i} has value {v}; densities must be finite and nonnegative"
            )));
        }
        let mass = spacing * values.iter().sum::<f64>();
        if (mass - 1.0).abs() > Self::MASS_TOL {
            return Err(Error::InvalidMeasure(format!(
                "total mass {mass} differs from 1 by more than {:e}",
                Self::MASS_TOL
            )));
        }
        Ok(Self {
            origin,
            spacing,
            values,
        })
    }

    /// Cell averages of a nonnegative profile `f`, normalized to unit mass.
    ///
    /// Each cell is integrated with 3-point Gauss-Legendre.
    pub fn from_fn(origin: f64, spacing: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        check_grid(origin, spacing, n)?;
        let nodes = [-(0.6f64.sqrt()), 0.0, 0.6f64.sqrt()];
        let gw = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
        let mut values: Vec<f64> = (0..n)
            .map(|i| {
                let c = origin + (i as f64 + 0.5) * spacing;
                nodes
                    .iter()
                    .zip(gw)
                    .map(|(z, w)| w * f(c + 0.5 * spacing * z).max(0.0))
                    .sum()
            })
            .collect();
        normalize(&mut values, spacing)?;
        Self::new(origin, spacing, values)
    }

    /// All mass in the cell that contains `at`.
    pub fn dirac(origin: f64, spacing: f64, n: usize, at: f64) -> Result<Self> {
        check_grid(origin, spacing, n)?;
        let idx = ((at - origin) / spacing).floor();
        if idx < 0.0 || idx >= n as f64 {
            return Err(Error::Grid(format!("point {at} lies outside the grid")));
        }
        let mut values = vec![0.0; n];
        values[idx as usize] = 1.0 / spacing;
        Self::new(origin, spacing, values)
    }

    /// Gaussian profile `N(mean, std^2)` discretized on the grid.
    pub fn gaussian(origin: f64, spacing: f64, n: usize, mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "std must be > 0, got {std}"
            )));
        }
        Self::from_fn(origin, spacing, n, |x| {
            (-(x - mean) * (x - mean) / (2.0 * std * std)).exp()
        })
    }

    /// Wraps solver output, renormalizing nothing; the caller guarantees the invariants.
    pub(crate) fn from_raw(origin: f64, spacing: f64, values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| *v >= 0.0));
        Self {
            origin,
            spacing,
            values,
        }
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn center(&self, i: usize) -> f64 {
        self.origin + (i as f64 + 0.5) * self.spacing
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.spacing
    }

    pub fn right_edge(&self) -> f64 {
        self.edge(self.len())
    }

    pub fn mass(&self) -> f64 {
        self.spacing * self.values.iter().sum::<f64>()
    }

    pub fn max_density(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_density(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CDF at the `n + 1` cell edges.
    pub fn cdf_at_edges(&self) -> Vec<f64> {
        let mut cdf = Vec::with_capacity(self.len() + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for v in &self.values {
            acc += v * self.spacing;
            cdf.push(acc);
        }
        cdf
    }

    pub fn mean(&self) -> f64 {
        (0..self.len())
            .map(|i| self.center(i) * self.values[i])
            .sum::<f64>()
            * self.spacing
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        (0..self.len())
            .map(|i| (self.center(i) - mu).powi(2) * self.values[i])
            .sum::<f64>()
            * self.spacing
    }

    /// Mass carried by the first and last cell.
    pub fn boundary_mass(&self) -> f64 {
        match self.values.as_slice() {
            [] => 0.0,
            [only] => only * self.spacing,
            [first, .., last] => (first + last) * self.spacing,
        }
    }

    /// Smallest radius around 0 outside of which at most `tail` mass lies.
    pub fn support_radius(&self, tail: f64) -> f64 {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&i, &j| {
            self.center(j)
                .abs()
                .partial_cmp(&self.center(i).abs())
                .unwrap()
        });
        let mut outside = 0.0;
        for i in order {
            outside += self.values[i] * self.spacing;
            if outside > tail {
                return self.center(i).abs() + 0.5 * self.spacing;
            }
        }
        0.0
    }

    pub fn same_grid(&self, other: &GridDensity) -> bool {
        self.len() == other.len() && self.spacing == other.spacing && self.origin == other.origin
    }

    /// Mass-conservative rebinning onto another uniform grid: every source cell
    /// spreads its mass uniformly over its extent and each target cell receives
    /// the overlapping share.
    pub fn rebin(&self, origin: f64, spacing: f64, n: usize) -> Result<GridDensity> {
        check_grid(origin, spacing, n)?;
        if n > MAX_REBIN_CELLS {
            return Err(Error::Grid(format!(
                "rebinning target of {n} cells exceeds {MAX_REBIN_CELLS}"
            )));
        }
        let target_hi = origin + n as f64 * spacing;
        if self.origin < origin - 1e-12 * spacing || self.right_edge() > target_hi + 1e-12 * spacing
        {
            return Err(Error::Grid(
                "rebinning target does not cover the source grid".into(),
            ));
        }
        let mut mass = vec![0.0; n];
        for (i, v) in self.values.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let lo = self.edge(i);
            let hi = self.edge(i + 1);
            let first = (((lo - origin) / spacing).floor().max(0.0) as usize).min(n - 1);
            let mut j = first;
            while j < n {
                let tlo = origin + j as f64 * spacing;
                let thi = tlo + spacing;
                if tlo >= hi {
                    break;
                }
                let overlap = (hi.min(thi) - lo.max(tlo)).max(0.0);
                mass[j] += v * overlap;
                j += 1;
            }
        }
        // Restore the exact total lost to overlap rounding.
        let total: f64 = mass.iter().sum();
        let values: Vec<f64> = mass.iter().map(|m| m / total / spacing).collect();
        GridDensity::new(origin, spacing, values)
    }

    /// Draws `n` equal-weight atoms through the inverse CDF (uniform within a cell).
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
        sampling: Sampling,
    ) -> Result<ParticleEnsemble> {
        if n == 0 {
            return Err(Error::InvalidArgument("cannot sample zero atoms".into()));
        }
        let cdf = self.cdf_at_edges();
        let total = *cdf.last().unwrap();
        let coords: Vec<f64> = (0..n)
            .map(|k| {
                let u: f64 = rng.random();
                let q = match sampling {
                    Sampling::Iid => u,
                    Sampling::Stratified => (k as f64 + u) / n as f64,
                } * total;
                self.quantile_from_cdf(&cdf, q)
            })
            .collect();
        ParticleEnsemble::uniform(Layout::Position, 1, coords)
    }

    fn quantile_from_cdf(&self, cdf: &[f64], q: f64) -> f64 {
        // first edge index with cdf > q
        let k = cdf.partition_point(|c| *c <= q).clamp(1, self.len());
        let cell = k - 1;
        let m = self.values[cell] * self.spacing;
        let frac = if m > 0.0 {
            ((q - cdf[cell]) / m).clamp(0.0, 1.0)
        } else {
            0.5
        };
        self.edge(cell) + frac * self.spacing
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.center(i), v));
        }
        out
    }

    /// Parses the `x,value` format written by [`GridDensity::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "x,value" => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected header `x,value`, found {other:?}"
                )))
            }
        }
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (ln, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::Parse(format!("line {}: missing column", ln + 2)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 2)))
            };
            xs.push(parse(parts.next())?);
            vs.push(parse(parts.next())?);
        }
        if xs.len() < 2 {
            return Err(Error::Parse("grid CSV needs at least two cells".into()));
        }
        let spacing = xs[1] - xs[0];
        let origin = xs[0] - 0.5 * spacing;
        Self::new(origin, spacing, vs)
    }
}

pub(crate) fn check_grid(origin: f64, spacing: f64, n: usize) -> Result<()> {
    if !origin.is_finite() {
        return Err(Error::Grid(format!("origin must be finite, got {origin}")));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::Grid(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    if n == 0 {
        return Err(Error::Grid("grid needs at least one cell".into()));
    }
    Ok(())
}

fn normalize(values: &mut [f64], spacing: f64) -> Result<()> {
    let mass: f64 = values.iter().sum::<f64>() * spacing;
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::InvalidMeasure(
            "profile has no mass on the grid".into(),
        ));
    }
    values.iter_mut().for_each(|v| *v /= mass);
    Ok(())
}

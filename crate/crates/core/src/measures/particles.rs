use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether atoms live in position space `R^d` or phase space `R^d x R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Position,
    /// Coordinates are stored as `[x_1..x_d, v_1..v_d]`.
    Phase,
}

/// Weighted atoms representing a probability measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    layout: Layout,
    spatial_dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleEnsemble {
    /// Tolerance on `sum(weights) = 1`.
    pub const WEIGHT_TOL: f64 = 1e-12;

    pub fn new(
        layout: Layout,
        spatial_dim: usize,
        coords: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if spatial_dim == 0 {
            return Err(Error::Dimension("spatial dimension must be >= 1".into()));
        }
        let width = width_of(layout, spatial_dim);
        if coords.len() != width * weights.len() {
            return Err(Error::Dimension(format!(
                "{} coordinates do not split into {} atoms of width {width}",
                coords.len(),
                weights.len()
            )));
        }
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("ensemble has no atoms".into()));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite coordinate {c}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > Self::WEIGHT_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            layout,
            spatial_dim,
            coords,
            weights,
        })
    }

    /// Equal weights `1/N`.
    pub fn uniform(layout: Layout, spatial_dim: usize, coords: Vec<f64>) -> Result<Self> {
        let width = width_of(layout, spatial_dim);
        if width == 0 || !coords.len().is_multiple_of(width) {
            return Err(Error::Dimension(format!(
                "{} coordinates do not split into atoms of width {width}",
                coords.len()
            )));
        }
        let n = coords.len() / width;
        Self::new(layout, spatial_dim, coords, vec![1.0 / n as f64; n])
    }

    /// Single atom of unit mass.
    pub fn dirac(layout: Layout, point: &[f64]) -> Result<Self> {
        let d = match layout {
            Layout::Position => point.len(),
            Layout::Phase => {
                if !point.len().is_multiple_of(2) {
                    return Err(Error::Dimension(
                        "phase-space point needs an even number of coordinates".into(),
                    ));
                }
                point.len() / 2
            }
        };
        Self::new(layout, d, point.to_vec(), vec![1.0])
    }

    /// Same atoms and weights, new coordinates (used by the integrators).
    pub(crate) fn with_coords(&self, coords: Vec<f64>) -> Result<Self> {
        Self::new(self.layout, self.spatial_dim, coords, self.weights.clone())
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }

    /// Number of coordinates per atom (`d` or `2d`).
    pub fn dim_total(&self) -> usize {
        width_of(self.layout, self.spatial_dim)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let w = self.dim_total();
        &self.coords[i * w..(i + 1) * w]
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.point(i)[..self.spatial_dim]
    }

    pub fn velocity(&self, i: usize) -> Option<&[f64]> {
        match self.layout {
            Layout::Position => None,
            Layout::Phase => Some(&self.point(i)[self.spatial_dim..]),
        }
    }

    /// Weighted mean of the velocity block.
    pub fn mean_velocity(&self) -> Result<Vec<f64>> {
        if self.layout != Layout::Phase {
            return Err(Error::Dimension(
                "mean velocity requires a phase-space ensemble".into(),
            ));
        }
        let d = self.spatial_dim;
        let mut mean = vec![0.0; d];
        for i in 0..self.len() {
            let v = self.velocity(i).unwrap();
            for k in 0..d {
                mean[k] += self.weights[i] * v[k];
            }
        }
        Ok(mean)
    }

    /// Largest pairwise velocity difference `max |v_i - v_j|`.
    pub fn velocity_diameter(&self) -> Result<f64> {
        if self.layout != Layout::Phase {
            return Err(Error::Dimension(
                "velocity diameter requires a phase-space ensemble".into(),
            ));
        }
        let mut diam: f64 = 0.0;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                diam = diam.max(dist(self.velocity(i).unwrap(), self.velocity(j).unwrap()));
            }
        }
        Ok(diam)
    }

    pub fn csv_header(&self) -> String {
        let d = self.spatial_dim;
        let mut cols: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
        if self.layout == Layout::Phase {
            cols.extend((1..=d).map(|k| format!("v{k}")));
        }
        cols.push("w".into());
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for i in 0..self.len() {
            for c in self.point(i) {
                out.push_str(&format!("{c},"));
            }
            out.push_str(&format!("{}\n", self.weights[i]));
        }
        out
    }

    /// Parses the format written by [`ParticleEnsemble::to_csv`]; the layout is
    /// inferred from the header (`v` columns mean phase space).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty particle CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.last() != Some(&"w") {
            return Err(Error::Parse("last column must be `w`".into()));
        }
        let nx = cols.iter().filter(|c| c.starts_with('x')).count();
        let nv = cols.iter().filter(|c| c.starts_with('v')).count();
        if nx == 0 || (nv != 0 && nv != nx) || nx + nv + 1 != cols.len() {
            return Err(Error::Parse(format!("unrecognized header `{header}`")));
        }
        let layout = if nv == 0 {
            Layout::Position
        } else {
            Layout::Phase
        };
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (ln, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 2)))?;
            if vals.len() != cols.len() {
                return Err(Error::Parse(format!("line {}: wrong column count", ln + 2)));
            }
            coords.extend_from_slice(&vals[..vals.len() - 1]);
            weights.push(vals[vals.len() - 1]);
        }
        Self::new(layout, nx, coords, weights)
    }
}

pub(crate) fn width_of(layout: Layout, d: usize) -> usize {
    match layout {
        Layout::Position => d,
        Layout::Phase => 2 * d,
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_must_sum_to_one() {
        let e = ParticleEnsemble::new(Layout::Position, 1, vec![0.0, 1.0], vec![0.5, 0.6]);
        assert!(matches!(e, Err(Error::InvalidMeasure(_))));
    }

    #[test]
    fn non_finite_points_rejected() {
        let e = ParticleEnsemble::uniform(Layout::Position, 1, vec![0.0, f64::NAN]);
        assert!(e.is_err());
    }

    #[test]
    fn phase_accessors() {
        let e = ParticleEnsemble::uniform(Layout::Phase, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.position(0), &[1.0, 2.0]);
        assert_eq!(e.velocity(0).unwrap(), &[3.0, 4.0]);
        assert_eq!(e.csv_header(), "x1,x2,v1,v2,w");
    }

    #[test]
    fn csv_round_trip() {
        let e = ParticleEnsemble::new(
            Layout::Phase,
            1,
            vec![0.1, -1.0 / 3.0, 2.5, 1e-17],
            vec![0.25, 0.75],
        )
        .unwrap();
        assert_eq!(ParticleEnsemble::from_csv(&e.to_csv()).unwrap(), e);
    }
}

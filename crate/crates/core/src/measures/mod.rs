//! Probability measures on the line and in phase space, their second moments,
//! and Wasserstein-1 distances.
//!
//! Grid densities are cell-averaged on uniform 1D grids. Particle ensembles
//! carry weighted atoms in position space `R^d` or phase space `R^{2d}`.

mod grid;
mod particles;
mod transport;
mod wasserstein;

use serde::{Deserialize, Serialize};

pub use grid::{GridDensity, GridFunction, Sampling, MAX_REBIN_CELLS};
pub use particles::{Layout, ParticleEnsemble};
pub use wasserstein::{
    wasserstein1_1d, wasserstein1_grid_particles, wasserstein1_particles, W1Mode, DEFAULT_SLICES,
    EXACT_PAIR_CAP,
};

pub(crate) use particles::dist;
pub(crate) use wasserstein::w1_same_grid;

use crate::error::{Error, Result};

/// Which coordinates enter a second moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    All,
    /// The `v` block of a phase-space measure.
    Velocity,
}

pub trait Moment2 {
    /// `int |selected(z)|^2 m(dz)`.
    fn moment2(&self, selector: Component) -> Result<f64>;
}

impl Moment2 for GridDensity {
    fn moment2(&self, selector: Component) -> Result<f64> {
        if selector == Component::Velocity {
            return Err(Error::Dimension(
                "grid densities live in position space; no velocity block".into(),
            ));
        }
        Ok((0..self.len())
            .map(|i| self.center(i).powi(2) * self.values()[i])
            .sum::<f64>()
            * self.spacing())
    }
}

impl Moment2 for ParticleEnsemble {
    fn moment2(&self, selector: Component) -> Result<f64> {
        let block: fn(&ParticleEnsemble, usize) -> &[f64] = match (selector, self.layout()) {
            (Component::All, _) => |e, i| e.point(i),
            (Component::Velocity, Layout::Phase) => |e, i| e.velocity(i).unwrap(),
            (Component::Velocity, Layout::Position) => {
                return Err(Error::Dimension(
                    "velocity block requested on a position-only ensemble".into(),
                ))
            }
        };
        Ok((0..self.len())
            .map(|i| self.weights()[i] * block(self, i).iter().map(|c| c * c).sum::<f64>())
            .sum())
    }
}

/// Time-indexed family of measures of one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurePath<M> {
    times: Vec<f64>,
    measures: Vec<M>,
}

impl<M> MeasurePath<M> {
    pub fn new(times: Vec<f64>, measures: Vec<M>) -> Result<Self> {
        if times.is_empty() || times.len() != measures.len() {
            return Err(Error::InvalidArgument(format!(
                "{} time nodes for {} measures",
                times.len(),
                measures.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "first time node must be 0, got {}",
                times[0]
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "time nodes must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, measures })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn measures(&self) -> &[M] {
        &self.measures
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_measure(&self) -> &M {
        self.measures.last().unwrap()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Index of the node closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let k = self.times.partition_point(|s| *s < t);
        if k == 0 {
            0
        } else if k >= self.times.len() {
            self.times.len() - 1
        } else if (self.times[k] - t).abs() < (t - self.times[k - 1]).abs() {
            k
        } else {
            k - 1
        }
    }

    pub fn at(&self, t: f64) -> &M {
        &self.measures[self.nearest_index(t)]
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &M)> {
        self.times.iter().copied().zip(self.measures.iter())
    }
}

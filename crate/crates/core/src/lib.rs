//! Numerical laboratory for discounted mean field games with cheap control and
//! their singular limits.
//!
//! Two model families are covered:
//!
//! * the 1D viscous MFG system with discount `lambda` and vanishing viscosity,
//!   whose densities approach the nonlocal aggregation equation as
//!   `lambda -> infinity` ([`mfg`], [`aggregation`]);
//! * the MFG of acceleration with a Cucker-Smale coupling, solved
//!   variationally over trajectory ensembles, whose minimizers approach the
//!   kinetic Cucker-Smale flow ([`acceleration`], [`cucker_smale`]).
//!
//! [`lab`] runs `lambda` sweeps and the bound diagnostics; [`config`] and
//! [`dispatch`] are the experiment-file surface used by the `mfglab` binary.

// `!(x > 0.0)` guards are meant to reject NaN as well; index loops mirror the stencils.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acceleration;
pub mod aggregation;
pub mod config;
pub mod coupling;
pub mod cucker_smale;
pub mod dispatch;
pub mod error;
pub mod hamiltonian;
pub mod lab;
pub mod measures;
pub mod mfg;
pub mod numerics;

pub use error::{Error, Result};

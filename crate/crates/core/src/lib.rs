//! Gauge functions, the q-Brownian sheet, and numerical checks of its
//! isotropy, local nondeterminism and exact uniform modulus of continuity.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// dense matrix kernels read more clearly with explicit indices
#![allow(clippy::needless_range_loop)]

pub mod covar;
pub mod error;
pub mod gauge;
pub mod modulus;
pub mod quad;
pub mod rng;
pub mod verify;

pub use covar::{
    CholeskySampler, DyadicGrid, FieldModel, GridCovariance, GridSample, PointCovariance,
    SamplerKind,
};
pub use error::{Error, Result};
pub use gauge::{ConditionReport, GaugeFamily, GaugeParams, GaugeSpec};
pub use quad::QuadSettings;

pub use faer::Mat;

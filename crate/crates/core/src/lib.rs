//! Attention-based interatomic potential with energy-conserving gradient
//! forces: two-stage attention (local neighborhood + global all-to-all) over a
//! differentiable soft-kNN graph, optional Legendre angular and radial sinc
//! encodings, plus training on synthetic potentials, MD drivers, and a
//! verification battery (symmetry, conservation, extensivity, scaling).

pub mod attention;
pub mod dataio;
pub mod diffcore;
pub mod elements;
pub mod encodings;
pub mod geometry;
pub mod model;
pub mod training;
pub mod error;

pub use error::{Error, Result};

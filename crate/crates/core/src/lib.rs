//! Lattice Liouville first-passage percolation and the coordinate-change
//! experiments built on it.
//!
//! * [`lattice`]: grid geometry, discrete circles and annuli.
//! * [`gff`]: Gaussian free field samplers, circle/smoothed averages, heat-kernel mollification.
//! * [`metric`]: the exponentially weighted lattice metric and its geodesics.
//! * [`conformal`]: closed-form conformal maps, pullback fields and pulled-back metrics.
//! * [`measure`]: the regularized area measure and ball-volume growth.
//! * [`events`]: annulus events and the bi-Lipschitz hypothesis estimate.
//! * [`harness`]: experiment configs, seeded ensembles and reports.

pub mod conformal;
pub mod error;
pub mod events;
pub mod field;
pub mod gff;
pub mod harness;
pub mod lattice;
pub mod measure;
pub mod metric;
pub mod params;

pub use error::{Error, Result};
pub use field::Field;
pub use lattice::{Annulus, ComplexPoint, GridSpec, VertexSet};
pub use params::LqgParams;

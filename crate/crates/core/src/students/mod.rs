//! Student networks: graph-free maps from node features to class logits.

mod fourier;
mod linear;
mod model;
mod spline;

pub use fourier::{FrKanLayer, FrKanPlusLayer};
pub use linear::LinearLayer;
pub use model::{count_params, Standardizer, StudentArch, StudentKind, StudentLayer, StudentModel};
pub use spline::{SplineGrid, SplineKanLayer, SPLINE_ORDER};

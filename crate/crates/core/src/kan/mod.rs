//! B-spline bases, trainable KAN layers, and the modified zero-order basis
//! used for exact ranking fits.

mod bspline;
mod bstar;
mod layer;

pub use bspline::{bspline_basis, BSplineGrid, MAX_ORDER};
pub use bstar::{bstar_eval, kaa_exact_fit, BStarKan, ZeroOrderBStarSpec};
pub use layer::{kan_layer_gradient_error, KanLayer, KanOptions, KanStack};

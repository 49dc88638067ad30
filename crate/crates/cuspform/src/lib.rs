//! Shock formation for strictly hyperbolic 1D systems in eikonal coordinates.

pub mod cusp;
pub mod eikonal;
pub mod mghd;
pub mod numerics;
pub mod preshock;
pub mod scalar;
pub mod simplewave;
pub mod spectral;
pub mod systems;

/// Cusp model in double precision.
pub type Cusp = cusp::CuspModel<f64>;
/// Cusp evaluation in double precision.
pub type CuspValue = cusp::CuspPoint<f64>;

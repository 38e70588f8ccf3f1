//! Two-species reaction-diffusion models: forward pattern generation, inverse
//! parameter inference with a physics-informed network, and pattern metrics.

pub mod analysis;
pub mod grid;
pub mod nn;
pub mod params;
pub mod pinn;
pub mod solver;

pub use grid::{GridSpec, Pattern, Provenance};
pub use params::{params_for_pattern, ParamId, PatternId, RdParams};

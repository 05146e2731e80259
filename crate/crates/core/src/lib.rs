//! Neural-network interatomic potentials for water clusters.
//!
//! The crate covers the whole workflow: surrogate reference surfaces that
//! generate minima and thermal non-minima, a SchNet-style network with exact
//! forces, energy/force training with checkpoint-initialized finetuning and
//! erf-threshold active sampling, Berendsen molecular dynamics driven by any
//! [`dynamics::ForceProvider`], and the error metrics used to compare models.
//!
//! Numerics are written once against [`scalar::Real`]; the concrete aliases
//! below name the instantiations the rest of the workflow uses.

pub mod active;
pub mod chemdata;
pub mod dynamics;
pub mod error;
pub mod evaluation;
mod hash;
pub mod model;
pub mod scalar;
pub mod surrogate;
pub mod training;

pub use error::{Error, Result};

/// Dual number with one `f64` tangent.
pub type Dual64 = scalar::Dual<f64>;
/// Tape of a double-precision forward pass.
pub type Tape64 = model::ClusterTape<f64>;
/// Tape carrying position tangents, as used by the force-loss gradient.
pub type DualTape64 = model::ClusterTape<Dual64>;
/// Single-precision tape, for fast inference experiments.
pub type Tape32 = model::ClusterTape<f32>;

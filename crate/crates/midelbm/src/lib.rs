//! Coupled discrete-element / lattice-Boltzmann simulation of rigid particles
//! whose shapes are metaball implicit surfaces, plus a fitting pipeline that
//! reconstructs such shapes from surface point clouds.
//!
//! The numerical core is generic over the scalar type through [`Real`];
//! concrete `f64` aliases for the main types live at the crate root.

pub mod dem;
pub mod engine;
pub mod geometry;
pub mod imaging;
pub mod io;
pub mod lbm;
pub mod mesh;
mod scalar;

pub use scalar::{real, Real};

pub type Metaball64 = geometry::Metaball<f64>;
pub type Metaball32 = geometry::Metaball<f32>;
pub type Aabb64 = geometry::Aabb<f64>;
pub type DemWorld64 = dem::DemWorld<f64>;
pub type LatticeField64 = lbm::LatticeField<f64>;
pub type Simulation64 = engine::Simulation<f64>;

//! Lattice Boltzmann fluid solver with BGK collision, physical units, and
//! moving-boundary coupling for metaball particles: interpolated bounce-back
//! at the hydrodynamic surface, velocity-shifted momentum exchange, and
//! local refilling of uncovered cells.

mod coupling;
mod field;
mod lattice;

pub use coupling::{hydrodynamic_region, hydrodynamic_surface_level, ImmersedBody};
pub use field::{AxisBc, BoundaryLink, FluidConfig, LatticeField, NodeClass, Viscosity};
pub use lattice::{LatticeSpec, VelocitySet};

#[derive(Debug, thiserror::Error)]
pub enum LbmError {
    #[error("invalid lattice configuration: {what}")]
    InvalidSpec { what: String },
    #[error("relaxation time {tau} is not above the BGK stability floor 0.5")]
    UnstableRelaxation { tau: f64 },
    #[error("non-positive density {rho} at cell ({x}, {y}, {z})")]
    NegativeDensity { x: usize, y: usize, z: usize, rho: f64 },
    #[error("non-finite distribution in direction {direction} at cell ({x}, {y}, {z})")]
    NonFiniteDistribution { x: usize, y: usize, z: usize, direction: usize },
    #[error("body {body} crosses a periodic domain face; declare walls there instead")]
    BodyOnPeriodicFace { body: usize },
    #[error("refill produced non-positive density {rho} at cell ({x}, {y}, {z})")]
    RefillNegativeDensity { x: usize, y: usize, z: usize, rho: f64 },
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

//! Rigid-body dynamics for metaball particles: Newton-Euler integration with
//! spring-dashpot contacts resolved on the implicit surfaces.

mod contact;
mod world;

pub use contact::{
    closest_points_pair, contact_force, contact_pair, contact_wall, point_velocity,
    ClosestPoints, ContactInfo, WallPlane,
};
pub use world::{DemWorld, StepReport};

use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3};

use crate::geometry::{GeometryError, Metaball};
use crate::{real, Real};

#[derive(Debug, thiserror::Error)]
pub enum DemError {
    #[error("particle mass must be positive, got {mass}")]
    NonPositiveMass { mass: f64 },
    #[error("inertia tensor must be symmetric positive definite")]
    BadInertia,
    #[error("contact stiffness must be positive and damping/friction non-negative")]
    BadContactParams,
    #[error(
        "time step {dt} exceeds the contact stability bound {bound} (0.1 sqrt(m_min/k_n))"
    )]
    UnstableTimeStep { dt: f64, bound: f64 },
    #[error("particles {a} and {b} interpenetrate beyond the contact model's validity")]
    DeepInterpenetration { a: usize, b: usize },
    #[error("wall normal must be a unit vector")]
    BadWall,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Spring-dashpot contact law constants.
#[derive(Debug, Clone, Copy)]
pub struct ContactParams<T: Real> {
    /// Normal stiffness, force per unit overlap.
    pub kn: T,
    /// Tangential stiffness.
    pub kt: T,
    /// Normal damping.
    pub eta_n: T,
    /// Tangential damping.
    pub eta_t: T,
    /// Static friction coefficient (Coulomb cap).
    pub mu_s: T,
}

impl<T: Real> Default for ContactParams<T> {
    fn default() -> Self {
        Self {
            kn: real::<T>(1e5),
            kt: real::<T>(5e4),
            eta_n: T::zero(),
            eta_t: T::zero(),
            mu_s: real::<T>(0.5),
        }
    }
}

impl<T: Real> ContactParams<T> {
    pub fn validate(&self) -> Result<(), DemError> {
        let ok = self.kn > T::zero()
            && self.kt > T::zero()
            && self.eta_n >= T::zero()
            && self.eta_t >= T::zero()
            && self.mu_s >= T::zero();
        if ok {
            Ok(())
        } else {
            Err(DemError::BadContactParams)
        }
    }
}

/// A rigid particle: body-frame shape plus kinematic state. The angular
/// velocity is stored in the world frame.
#[derive(Debug, Clone)]
pub struct ParticleState<T: Real> {
    pub shape: Metaball<T>,
    pub mass: T,
    /// Body-frame inertia tensor (density-scaled).
    pub inertia: Matrix3<T>,
    inertia_inv: Matrix3<T>,
    pub position: Point3<T>,
    pub orientation: UnitQuaternion<T>,
    pub velocity: Vector3<T>,
    pub angular_velocity: Vector3<T>,
    pub accumulated_force: Vector3<T>,
    pub accumulated_torque: Vector3<T>,
}

impl<T: Real> ParticleState<T> {
    pub fn new(
        shape: Metaball<T>,
        mass: T,
        inertia: Matrix3<T>,
        position: Point3<T>,
        orientation: UnitQuaternion<T>,
    ) -> Result<Self, DemError> {
        if !(mass > T::zero()) || !mass.is_finite() {
            return Err(DemError::NonPositiveMass {
                mass: mass.to_f64().unwrap_or(f64::NAN),
            });
        }
        let asym = (inertia - inertia.transpose()).norm();
        if asym > real::<T>(1e-9) * inertia.norm() {
            return Err(DemError::BadInertia);
        }
        let eigen = inertia.symmetric_eigenvalues();
        if eigen.iter().any(|&l| !(l > T::zero())) {
            return Err(DemError::BadInertia);
        }
        let inertia_inv = inertia.try_inverse().ok_or(DemError::BadInertia)?;
        Ok(Self {
            shape,
            mass,
            inertia,
            inertia_inv,
            position,
            orientation,
            velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            accumulated_force: Vector3::zeros(),
            accumulated_torque: Vector3::zeros(),
        })
    }

    pub fn with_velocity(mut self, v: Vector3<T>, omega: Vector3<T>) -> Self {
        self.velocity = v;
        self.angular_velocity = omega;
        self
    }

    pub fn inertia_inv(&self) -> &Matrix3<T> {
        &self.inertia_inv
    }

    /// Body-to-world placement of the particle.
    pub fn pose(&self) -> nalgebra::Isometry3<T> {
        nalgebra::Isometry3::from_parts(self.position.coords.into(), self.orientation)
    }

    /// The shape in its current world placement.
    pub fn world_shape(&self) -> Metaball<T> {
        self.shape.transformed(&self.pose())
    }
}

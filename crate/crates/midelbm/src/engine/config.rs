//! Scenario configuration: the JSON document describing a coupled run.
//!
//! The schema is deliberately plain data (arrays instead of algebra types,
//! strings for file references) so a scenario can be written by hand and
//! diffed. Typed solver structures are built from it at simulation setup;
//! `validate` reports the first violated rule with the path of the offending
//! field.

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::dem::ContactParams;
use crate::lbm::{AxisBc, FluidConfig, VelocitySet, Viscosity};
use crate::{real, Real};
use nalgebra::Vector3;

const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub domain: DomainConfig,
    pub lattice: LatticeConfig,
    pub fluid: FluidSection,
    pub dem: DemSection,
    /// Gravitational acceleration applied to the particles, in m/s².
    pub gravity: [f64; 3],
    pub particles: Vec<ParticleEntry>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Physical duration of the run, in seconds.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Grid resolution for mass, centroid and inertia integration.
    #[serde(default = "default_mass_resolution")]
    pub mass_resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// Per-axis treatment of the domain faces.
    pub boundaries: [BoundaryKind; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Periodic,
    /// No-slip lattice faces plus matching rigid container walls.
    Walls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub velocity_set: VelocitySetName,
    /// Lattice spacing Δx, in meters.
    pub dx: f64,
    /// Lattice time step, in seconds. One macro step advances this far.
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocitySetName {
    D2Q9,
    D3Q15,
}

impl VelocitySetName {
    pub fn to_set(self) -> VelocitySet {
        match self {
            VelocitySetName::D2Q9 => VelocitySet::D2Q9,
            VelocitySetName::D3Q15 => VelocitySet::D3Q15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidSection {
    /// Fluid density ρ_f, in kg/m³.
    pub density: f64,
    pub viscosity: ViscosityEntry,
    /// Uniform body acceleration on the fluid, in m/s². Zero in settling
    /// scenarios, where buoyancy enters through the particles instead.
    #[serde(default)]
    pub body_acceleration: [f64; 3],
}

/// Viscosity with the unit spelled out in the document, so a scenario states
/// explicitly which interpretation it intends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViscosityEntry {
    /// m²/s
    Kinematic(f64),
    /// Pa·s
    Dynamic(f64),
}

impl ViscosityEntry {
    pub fn value(self) -> f64 {
        match self {
            ViscosityEntry::Kinematic(v) | ViscosityEntry::Dynamic(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemSection {
    /// DEM substep, in seconds. Must divide the lattice step evenly.
    pub dt: f64,
    #[serde(default)]
    pub contact: ContactEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactEntry {
    pub kn: f64,
    pub kt: f64,
    pub eta_n: f64,
    pub eta_t: f64,
    pub mu_s: f64,
}

impl Default for ContactEntry {
    fn default() -> Self {
        Self {
            kn: 1e5,
            kt: 5e4,
            eta_n: 0.0,
            eta_t: 0.0,
            mu_s: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleEntry {
    /// Path of the metaball parameter file, relative to the config file.
    pub shape: String,
    /// Particle density ρ_p, in kg/m³.
    pub density: f64,
    /// Initial center of mass, in meters.
    pub position: [f64; 3],
    /// Initial orientation as a quaternion [w, x, y, z]; normalized on load.
    #[serde(default = "default_orientation")]
    pub orientation: [f64; 4],
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub angular_velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Record the time series every this many macro steps.
    pub record_every: usize,
    /// Write a field snapshot every this many macro steps; 0 disables them.
    pub snapshot_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            record_every: 1,
            snapshot_every: 0,
        }
    }
}

fn default_mass_resolution() -> usize {
    64
}

fn default_orientation() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn fail(field: impl Into<String>, message: impl Into<String>) -> EngineError {
    EngineError::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn finite3(v: &[f64; 3]) -> bool {
    v.iter().all(|c| c.is_finite())
}

impl SimulationConfig {
    /// Parse and validate a scenario document.
    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| fail("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !finite3(&self.domain.min) || !finite3(&self.domain.max) {
            return Err(fail("domain", "bounds must be finite"));
        }
        for axis in 0..3 {
            if !(self.domain.max[axis] > self.domain.min[axis]) {
                return Err(fail(
                    "domain.max",
                    format!("must exceed domain.min along {}", AXIS_NAMES[axis]),
                ));
            }
        }
        if !(self.lattice.dx > 0.0) || !self.lattice.dx.is_finite() {
            return Err(fail("lattice.dx", "must be positive"));
        }
        if !(self.lattice.dt > 0.0) || !self.lattice.dt.is_finite() {
            return Err(fail("lattice.dt", "must be positive"));
        }
        for axis in 0..3 {
            let extent = self.domain.max[axis] - self.domain.min[axis];
            let n = (extent / self.lattice.dx).round();
            if n < 1.0 || (n * self.lattice.dx - extent).abs() > 1e-6 * extent {
                return Err(fail(
                    "domain",
                    format!(
                        "extent along {} is not a whole number of lattice cells",
                        AXIS_NAMES[axis]
                    ),
                ));
            }
        }
        if self.lattice.velocity_set == VelocitySetName::D2Q9 {
            if self.cells()[2] != 1 {
                return Err(fail("domain", "a d2q9 run needs exactly one cell along z"));
            }
            if self.domain.boundaries[2] != BoundaryKind::Periodic {
                return Err(fail(
                    "domain.boundaries",
                    "the z axis must be periodic for d2q9",
                ));
            }
        }
        if !(self.fluid.density > 0.0) || !self.fluid.density.is_finite() {
            return Err(fail("fluid.density", "must be positive"));
        }
        if !(self.fluid.viscosity.value() > 0.0) || !self.fluid.viscosity.value().is_finite() {
            return Err(fail("fluid.viscosity", "must be positive"));
        }
        if !finite3(&self.fluid.body_acceleration) {
            return Err(fail("fluid.body_acceleration", "must be finite"));
        }
        if !(self.dem.dt > 0.0) || !self.dem.dt.is_finite() {
            return Err(fail("dem.dt", "must be positive"));
        }
        let ratio = self.lattice.dt / self.dem.dt;
        let n_sub = ratio.round();
        if n_sub < 1.0 || (n_sub * self.dem.dt - self.lattice.dt).abs() > 1e-9 * self.lattice.dt
        {
            return Err(fail(
                "dem.dt",
                "the lattice step must be a whole positive multiple of the DEM step",
            ));
        }
        let c = &self.dem.contact;
        for (name, value) in [("dem.contact.kn", c.kn), ("dem.contact.kt", c.kt)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(fail(name, "must be positive"));
            }
        }
        for (name, value) in [
            ("dem.contact.eta_n", c.eta_n),
            ("dem.contact.eta_t", c.eta_t),
            ("dem.contact.mu_s", c.mu_s),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(fail(name, "must be non-negative"));
            }
        }
        if !finite3(&self.gravity) {
            return Err(fail("gravity", "must be finite"));
        }
        if self.particles.is_empty() {
            return Err(fail(
                "particles".to_string(),
                "at least one particle is required",
            ));
        }
        for (i, p) in self.particles.iter().enumerate() {
            if p.shape.is_empty() {
                return Err(fail(
                    format!("particles[{i}].shape"),
                    "must reference a metaball file",
                ));
            }
            if !(p.density > 0.0) || !p.density.is_finite() {
                return Err(fail(format!("particles[{i}].density"), "must be positive"));
            }
            if !finite3(&p.position) || !finite3(&p.velocity) || !finite3(&p.angular_velocity) {
                return Err(fail(format!("particles[{i}]"), "motion state must be finite"));
            }
            let qn = p.orientation.iter().map(|c| c * c).sum::<f64>().sqrt();
            if !(qn > 1e-12) || !qn.is_finite() {
                return Err(fail(
                    format!("particles[{i}].orientation"),
                    "must be a non-zero quaternion",
                ));
            }
        }
        if self.output.record_every == 0 {
            return Err(fail("output.record_every", "must be at least 1"));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(fail("duration", "must be positive"));
        }
        if self.mass_resolution < 32 {
            return Err(fail("mass_resolution", "must be at least 32"));
        }
        Ok(())
    }

    /// Lattice cells per axis. Meaningful after `validate`.
    pub fn cells(&self) -> [usize; 3] {
        let mut dims = [0usize; 3];
        for axis in 0..3 {
            let extent = self.domain.max[axis] - self.domain.min[axis];
            dims[axis] = (extent / self.lattice.dx).round() as usize;
        }
        dims
    }

    /// DEM substeps per macro step. Meaningful after `validate`.
    pub fn subcycles(&self) -> usize {
        (self.lattice.dt / self.dem.dt).round() as usize
    }

    /// Macro steps covering the configured duration (rounded, at least one).
    pub fn total_steps(&self) -> usize {
        ((self.duration / self.lattice.dt).round() as usize).max(1)
    }

    pub fn boundary_conditions(&self) -> [AxisBc; 3] {
        self.domain.boundaries.map(|b| match b {
            BoundaryKind::Periodic => AxisBc::Periodic,
            BoundaryKind::Walls => AxisBc::Walls,
        })
    }

    pub fn fluid_config<T: Real>(&self) -> FluidConfig<T> {
        FluidConfig {
            density: real::<T>(self.fluid.density),
            viscosity: match self.fluid.viscosity {
                ViscosityEntry::Kinematic(v) => Viscosity::Kinematic(real::<T>(v)),
                ViscosityEntry::Dynamic(v) => Viscosity::Dynamic(real::<T>(v)),
            },
            body_acceleration: vector3(&self.fluid.body_acceleration),
        }
    }

    pub fn contact_params<T: Real>(&self) -> ContactParams<T> {
        ContactParams {
            kn: real::<T>(self.dem.contact.kn),
            kt: real::<T>(self.dem.contact.kt),
            eta_n: real::<T>(self.dem.contact.eta_n),
            eta_t: real::<T>(self.dem.contact.eta_t),
            mu_s: real::<T>(self.dem.contact.mu_s),
        }
    }

    pub fn gravity_vector<T: Real>(&self) -> Vector3<T> {
        vector3(&self.gravity)
    }
}

pub(super) fn vector3<T: Real>(v: &[f64; 3]) -> Vector3<T> {
    Vector3::new(real::<T>(v[0]), real::<T>(v[1]), real::<T>(v[2]))
}

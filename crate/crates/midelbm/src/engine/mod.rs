//! Coupled solver driver and scenario diagnostics.
//!
//! One macro step advances the fluid a single lattice step (classification,
//! collision, boundary interpolation, streaming, momentum exchange, refill)
//! and then integrates the particles through a burst of DEM substeps under
//! the frozen hydrodynamic load. Buoyancy enters as a reduced effective
//! weight on each particle rather than a fluid body force, so the field
//! carries no hydrostatic gradient and refilled nodes never need one.

mod config;
mod descriptors;
mod dkt;

pub use config::{
    BoundaryKind, ContactEntry, DemSection, DomainConfig, FluidSection, LatticeConfig,
    OutputConfig, ParticleEntry, SimulationConfig, VelocitySetName, ViscosityEntry,
};
pub use descriptors::{shape_descriptors, ShapeDescriptors};
pub use dkt::{dkt_metrics, DktMetrics, DktSample};

use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};

use crate::dem::{DemError, DemWorld, ParticleState, WallPlane};
use crate::geometry::{ControlPoint, GeometryError, Metaball, SpheroDilation};
use crate::lbm::{
    hydrodynamic_region, FluidConfig, ImmersedBody, LatticeField, LatticeSpec, LbmError,
};
use crate::{real, Real};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error("the roster names {expected} particles but {got} shapes were supplied")]
    ShapeRoster { expected: usize, got: usize },
    #[error("particles[{index}]: initial bounding box extends outside the domain")]
    ParticleOutsideDomain { index: usize },
    #[error("particles[{index}]: shape rejected")]
    Shape {
        index: usize,
        #[source]
        source: LbmError,
    },
    #[error("degenerate shape: {message}")]
    DegenerateShape { message: String },
    #[error("fluid solver setup failed")]
    FluidSetup(#[source] LbmError),
    #[error("rigid-body setup failed")]
    DemSetup(#[source] DemError),
    #[error("macro step {step}: fluid update failed")]
    Lbm {
        step: usize,
        #[source]
        source: LbmError,
    },
    #[error("macro step {step}, substep {substep}: rigid-body update failed")]
    Dem {
        step: usize,
        substep: usize,
        #[source]
        source: DemError,
    },
    #[error("macro step {step}: non-finite value in the time series")]
    NonFiniteRecord { step: usize },
    #[error("the time series is empty")]
    EmptySeries,
    #[error("viscosity must be positive to form a Reynolds number")]
    ZeroViscosity,
    #[error("expected records for exactly {expected} particles, got {got}")]
    ParticleCount { expected: usize, got: usize },
    #[error("{what} must be positive")]
    NonPositiveArgument { what: &'static str },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Kinematic and load state of one particle at a sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRecord<T: Real> {
    pub position: Point3<T>,
    pub velocity: Vector3<T>,
    pub angular_velocity: Vector3<T>,
    pub hydro_force: Vector3<T>,
    pub hydro_torque: Vector3<T>,
}

/// One sample of the run: simulation time, per-particle state and the number
/// of resolved contacts at the end of the macro step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesRecord<T: Real> {
    /// Macro steps completed when the sample was taken.
    pub step: usize,
    pub time: T,
    pub particles: Vec<ParticleRecord<T>>,
    pub contacts: usize,
}

impl<T: Real> TimeSeriesRecord<T> {
    pub fn is_finite(&self) -> bool {
        let finite_vec = |v: &Vector3<T>| v.iter().all(|c| c.is_finite());
        self.time.is_finite()
            && self.particles.iter().all(|p| {
                p.position.coords.iter().all(|c| c.is_finite())
                    && finite_vec(&p.velocity)
                    && finite_vec(&p.angular_velocity)
                    && finite_vec(&p.hydro_force)
                    && finite_vec(&p.hydro_torque)
            })
    }
}

/// Peak-velocity Reynolds number ρ_f·U_p·D_e/μ of a recorded series, with
/// U_p the largest particle speed found anywhere in the records and D_e the
/// volume-equivalent sphere diameter.
pub fn reynolds<T: Real>(
    records: &[TimeSeriesRecord<T>],
    fluid_density: T,
    dynamic_viscosity: T,
    equivalent_diameter: T,
) -> Result<T, EngineError> {
    if records.is_empty() {
        return Err(EngineError::EmptySeries);
    }
    if !(dynamic_viscosity > T::zero()) || !dynamic_viscosity.is_finite() {
        return Err(EngineError::ZeroViscosity);
    }
    if !(fluid_density > T::zero()) {
        return Err(EngineError::NonPositiveArgument {
            what: "fluid density",
        });
    }
    if !(equivalent_diameter > T::zero()) {
        return Err(EngineError::NonPositiveArgument {
            what: "equivalent diameter",
        });
    }
    let mut peak = T::zero();
    for record in records {
        for p in &record.particles {
            peak = peak.max(p.velocity.norm());
        }
    }
    Ok(fluid_density * peak * equivalent_diameter / dynamic_viscosity)
}

/// A configured coupled run: lattice fluid, rigid particles and the
/// bookkeeping that ties them together.
pub struct Simulation<T: Real> {
    field: LatticeField<T>,
    dem: DemWorld<T>,
    fluid: FluidConfig<T>,
    /// (1 − ρ_f/ρ_p)·m·g per particle, folded into the external load.
    effective_weights: Vec<Vector3<T>>,
    volumes: Vec<T>,
    hydro: Vec<(Vector3<T>, Vector3<T>)>,
    subcycles: usize,
    dt_macro: T,
    step_index: usize,
    total_steps: usize,
    record_every: usize,
    snapshot_every: usize,
    seed: u64,
    last_contacts: usize,
}

impl<T: Real> Simulation<T> {
    /// Build a run from a validated scenario and the roster's shapes, given
    /// in roster order. Shapes are re-centered so each particle's reference
    /// point is the center of mass of the region the fluid treats as solid;
    /// mass and inertia are integrated over that same region.
    pub fn new(cfg: &SimulationConfig, shapes: Vec<Metaball<T>>) -> Result<Self, EngineError> {
        cfg.validate()?;
        if shapes.len() != cfg.particles.len() {
            return Err(EngineError::ShapeRoster {
                expected: cfg.particles.len(),
                got: shapes.len(),
            });
        }
        let spec = LatticeSpec::new(
            cfg.lattice.velocity_set.to_set(),
            real::<T>(cfg.lattice.dx),
            real::<T>(cfg.lattice.dt),
        )
        .map_err(EngineError::FluidSetup)?;
        let fluid = cfg.fluid_config::<T>();
        let domain_min = Point3::from(config::vector3::<T>(&cfg.domain.min));
        let domain_max = Point3::from(config::vector3::<T>(&cfg.domain.max));
        let field = LatticeField::new(
            spec,
            cfg.cells(),
            domain_min,
            cfg.boundary_conditions(),
            &fluid,
        )
        .map_err(EngineError::FluidSetup)?;

        let gravity = cfg.gravity_vector::<T>();
        let mut particles = Vec::with_capacity(shapes.len());
        let mut volumes = Vec::with_capacity(shapes.len());
        let mut effective_weights = Vec::with_capacity(shapes.len());
        for (index, (entry, shape)) in cfg.particles.iter().zip(shapes).enumerate() {
            let wrap = |source: LbmError| EngineError::Shape { index, source };
            let density = real::<T>(entry.density);
            let region = hydrodynamic_region(&shape).map_err(wrap)?;
            let props = region
                .mass_properties(density, cfg.mass_resolution, SpheroDilation::Off)
                .map_err(|e| wrap(e.into()))?;
            let mass = density * props.volume;
            let shift = props.centroid.coords;
            let centered = shape
                .control_points()
                .iter()
                .map(|cp| ControlPoint::new(cp.position - shift, cp.weight))
                .collect();
            let centered =
                Metaball::with_surface_level(centered, shape.sphero_radius(), shape.surface_level())
                    .map_err(|e| wrap(e.into()))?;
            let [w, x, y, z] = entry.orientation.map(real::<T>);
            let orientation = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
            let state = ParticleState::new(
                centered,
                mass,
                props.inertia_tensor,
                Point3::from(config::vector3::<T>(&entry.position)),
                orientation,
            )
            .map_err(EngineError::DemSetup)?
            .with_velocity(
                config::vector3(&entry.velocity),
                config::vector3(&entry.angular_velocity),
            );
            // Containment only matters along wall axes; periodic axes wrap,
            // and a disc in a one-cell-thick periodic slab legitimately
            // overhangs it.
            let bbox = state.world_shape().bounding_box(T::zero());
            let inside = (0..3).all(|a| {
                cfg.domain.boundaries[a] == BoundaryKind::Periodic
                    || (bbox.min[a] >= domain_min[a] && bbox.max[a] <= domain_max[a])
            });
            if !inside {
                return Err(EngineError::ParticleOutsideDomain { index });
            }
            let buoyancy_factor = T::one() - fluid.density / density;
            effective_weights.push(gravity * (mass * buoyancy_factor));
            volumes.push(props.volume);
            particles.push(state);
        }

        let mut walls = Vec::new();
        for axis in 0..3 {
            if cfg.domain.boundaries[axis] == BoundaryKind::Walls {
                let mut normal = Vector3::zeros();
                normal[axis] = T::one();
                walls.push(WallPlane::new(domain_min, normal).map_err(EngineError::DemSetup)?);
                walls.push(WallPlane::new(domain_max, -normal).map_err(EngineError::DemSetup)?);
            }
        }

        let subcycles = cfg.subcycles();
        let dt_dem = real::<T>(cfg.lattice.dt) / real::<T>(subcycles as f64);
        let particle_count = particles.len();
        let dem = DemWorld::new(
            particles,
            walls,
            cfg.contact_params::<T>(),
            // Gravity and buoyancy are folded into the external loads, per
            // particle, so the world itself carries no shared acceleration.
            Vector3::zeros(),
            dt_dem,
        )
        .map_err(EngineError::DemSetup)?;

        let mut sim = Self {
            field,
            dem,
            fluid,
            effective_weights,
            volumes,
            hydro: vec![(Vector3::zeros(), Vector3::zeros()); particle_count],
            subcycles,
            dt_macro: real::<T>(cfg.lattice.dt),
            step_index: 0,
            total_steps: cfg.total_steps(),
            record_every: cfg.output.record_every,
            snapshot_every: cfg.output.snapshot_every,
            seed: cfg.seed,
            last_contacts: 0,
        };
        // Classify immediately so shape or placement problems surface at
        // setup and the initial field snapshot already carries node classes.
        sim.classify()
            .map_err(|source| EngineError::Lbm { step: 0, source })?;
        Ok(sim)
    }

    fn classify(&mut self) -> Result<(), LbmError> {
        let bodies: Vec<ImmersedBody<T>> = self
            .dem
            .particles()
            .iter()
            .map(|p| ImmersedBody {
                shape: p.world_shape(),
                centroid: p.position,
                velocity: p.velocity,
                angular_velocity: p.angular_velocity,
            })
            .collect();
        self.field.classify(&bodies)
    }

    /// Advance one macro step: one lattice step, then the DEM substeps under
    /// the hydrodynamic load frozen at this step's momentum exchange.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let step = self.step_index;
        let lbm = |source: LbmError| EngineError::Lbm { step, source };
        self.classify().map_err(lbm)?;
        self.field.collide(&self.fluid).map_err(lbm)?;
        self.field.apply_ibb(&self.fluid).map_err(lbm)?;
        self.field.stream(&self.fluid);
        let centers: Vec<Point3<T>> = self.dem.particles().iter().map(|p| p.position).collect();
        self.hydro = self.field.momentum_exchange(&centers);
        self.field.refill(&self.fluid).map_err(lbm)?;
        for i in 0..centers.len() {
            let (force, torque) = self.hydro[i];
            self.dem
                .set_external_load(i, force + self.effective_weights[i], torque);
        }
        for substep in 0..self.subcycles {
            let report = self.dem.step().map_err(|source| EngineError::Dem {
                step,
                substep,
                source,
            })?;
            self.last_contacts = report.pair_contacts + report.wall_contacts;
        }
        self.step_index += 1;
        Ok(())
    }

    /// Snapshot of the current particle state and hydrodynamic loads.
    pub fn record(&self) -> TimeSeriesRecord<T> {
        TimeSeriesRecord {
            step: self.step_index,
            time: self.dt_macro * real::<T>(self.step_index as f64),
            particles: self
                .dem
                .particles()
                .iter()
                .zip(&self.hydro)
                .map(|(p, &(force, torque))| ParticleRecord {
                    position: p.position,
                    velocity: p.velocity,
                    angular_velocity: p.angular_velocity,
                    hydro_force: force,
                    hydro_torque: torque,
                })
                .collect(),
            contacts: self.last_contacts,
        }
    }

    /// Run the remaining macro steps, collecting records at the configured
    /// cadence (plus the initial and final states).
    pub fn run(&mut self) -> Result<Vec<TimeSeriesRecord<T>>, EngineError> {
        let mut records = Vec::with_capacity(self.total_steps / self.record_every + 2);
        records.push(self.record());
        while self.step_index < self.total_steps {
            self.step()?;
            if self.step_index % self.record_every == 0 || self.step_index == self.total_steps {
                let record = self.record();
                if !record.is_finite() {
                    return Err(EngineError::NonFiniteRecord {
                        step: self.step_index,
                    });
                }
                records.push(record);
            }
        }
        Ok(records)
    }

    pub fn field(&self) -> &LatticeField<T> {
        &self.field
    }

    pub fn dem(&self) -> &DemWorld<T> {
        &self.dem
    }

    pub fn fluid(&self) -> &FluidConfig<T> {
        &self.fluid
    }

    pub fn time(&self) -> T {
        self.dt_macro * real::<T>(self.step_index as f64)
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// DEM substeps per macro step.
    pub fn subcycles(&self) -> usize {
        self.subcycles
    }

    pub fn record_every(&self) -> usize {
        self.record_every
    }

    pub fn snapshot_every(&self) -> usize {
        self.snapshot_every
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn particle_volume(&self, index: usize) -> T {
        self.volumes[index]
    }

    /// Diameter of the sphere matching the particle's solid-region volume.
    pub fn equivalent_diameter(&self, index: usize) -> T {
        let six = real::<T>(6.0);
        let third = T::one() / real::<T>(3.0);
        (six * self.volumes[index] / T::pi()).powf(third)
    }
}

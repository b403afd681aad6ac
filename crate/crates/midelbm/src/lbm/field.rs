//! Lattice storage, BGK collision with Guo forcing, and two-buffer pull
//! streaming with halfway bounce-back at declared wall faces.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::{LatticeSpec, LbmError};
use crate::{real, Real};

/// Domain closure per axis: wrap-around or a static no-slip wall half a cell
/// beyond the outermost node layer on both faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisBc {
    Periodic,
    Walls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Fluid,
    /// Fluid node with at least one link crossing a particle surface.
    Boundary,
    Solid {
        particle: u32,
    },
}

impl NodeClass {
    pub fn is_solid(&self) -> bool {
        matches!(self, NodeClass::Solid { .. })
    }
}

/// Viscosity with an explicit unit tag.
#[derive(Debug, Clone, Copy)]
pub enum Viscosity<T: Real> {
    /// m²/s
    Kinematic(T),
    /// Pa·s
    Dynamic(T),
}

#[derive(Debug, Clone, Copy)]
pub struct FluidConfig<T: Real> {
    /// Reference density ρ_f in kg/m³.
    pub density: T,
    pub viscosity: Viscosity<T>,
    /// Uniform body acceleration applied to the fluid (m/s²); zero in the
    /// coupled solver, where buoyancy enters through the particles instead.
    pub body_acceleration: Vector3<T>,
}

impl<T: Real> FluidConfig<T> {
    pub fn kinematic_viscosity(&self) -> T {
        match self.viscosity {
            Viscosity::Kinematic(nu) => nu,
            Viscosity::Dynamic(mu) => mu / self.density,
        }
    }

    /// BGK relaxation time τ = 3ν·Δt/Δx² + 1/2 (dimensionless).
    pub fn relaxation_time(&self, spec: &LatticeSpec<T>) -> Result<T, LbmError> {
        let nu = self.kinematic_viscosity();
        let c = spec.lattice_speed();
        let tau = real::<T>(3.0) * nu / (c * c * spec.dt()) + real::<T>(0.5);
        if !(tau > real::<T>(0.5)) || !tau.is_finite() {
            return Err(LbmError::UnstableRelaxation {
                tau: tau.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(tau)
    }
}

/// One lattice link from a boundary-fluid node into an adjacent solid node,
/// cut by a particle surface at fraction `q` of the link length.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryLink<T: Real> {
    /// Linear cell index of the boundary-fluid node x_f.
    pub cell: usize,
    /// Direction index pointing from x_f toward the solid neighbor.
    pub direction: usize,
    /// Fraction of the link length at which the surface sits, in (0, 1].
    pub q: T,
    pub wall_point: Point3<T>,
    pub wall_velocity: Vector3<T>,
    pub particle: u32,
    /// False when the surface intersection could not be bracketed and the
    /// link falls back to plain bounce-back.
    pub interpolated: bool,
}

#[derive(Debug, Clone, Copy)]
pub(super) struct FreshNode<T: Real> {
    pub cell: usize,
    /// Surface velocity of the particle that vacated the cell, evaluated at
    /// the cell center; zero when that particle no longer exists.
    pub wall_velocity: Vector3<T>,
}

/// Where a pull along direction i at a given node sources from.
pub(super) enum PullSource {
    /// Interior neighbor that collided this step.
    Cell(usize),
    /// Half-way bounce-back at a domain wall face: the node's own
    /// post-collision distribution in the reversed direction.
    OwnBounce,
    BlockedSolid,
    BlockedFresh(usize),
}

pub struct LatticeField<T: Real> {
    spec: LatticeSpec<T>,
    dims: [usize; 3],
    origin: Point3<T>,
    bc: [AxisBc; 3],
    /// Current distributions, cell-major: g[cell * q + i].
    pub(super) g: Vec<T>,
    /// Streaming target buffer.
    g_back: Vec<T>,
    /// Macroscopic caches from the most recent collision.
    pub(super) rho: Vec<T>,
    pub(super) vel: Vec<Vector3<T>>,
    pub(super) class: Vec<NodeClass>,
    pub(super) prev_class: Vec<NodeClass>,
    pub(super) links: Vec<BoundaryLink<T>>,
    /// (g_out toward the wall, g_returned) per link, filled by apply_ibb.
    pub(super) link_exchange: Vec<(T, T)>,
    /// Returning distributions staged by apply_ibb, written after streaming:
    /// (cell, direction, value).
    pub(super) staged_returns: Vec<(usize, usize, T)>,
    pub(super) fresh: Vec<FreshNode<T>>,
    /// Per-cell index into `fresh`, -1 when the cell is not fresh.
    pub(super) fresh_lookup: Vec<i32>,
    /// Links or pulls that degraded to plain bounce-back this step.
    pub(super) plain_bounce_fallbacks: usize,
}

impl<T: Real> LatticeField<T> {
    pub fn new(
        spec: LatticeSpec<T>,
        dims: [usize; 3],
        origin: Point3<T>,
        bc: [AxisBc; 3],
        cfg: &FluidConfig<T>,
    ) -> Result<Self, LbmError> {
        if dims.iter().any(|&n| n == 0) {
            return Err(LbmError::InvalidSpec {
                what: format!("all dimensions must be at least 1, got {dims:?}"),
            });
        }
        if spec.velocity_set().dimension() == 2 && dims[2] != 1 {
            return Err(LbmError::InvalidSpec {
                what: format!("a two-dimensional velocity set needs nz = 1, got {}", dims[2]),
            });
        }
        if !(cfg.density > T::zero()) || !cfg.density.is_finite() {
            return Err(LbmError::InvalidSpec {
                what: "fluid density must be positive".to_string(),
            });
        }
        cfg.relaxation_time(&spec)?;
        let cells = dims[0] * dims[1] * dims[2];
        let q = spec.velocity_set().count();
        let mut field = Self {
            spec,
            dims,
            origin,
            bc,
            g: vec![T::zero(); cells * q],
            g_back: vec![T::zero(); cells * q],
            rho: vec![cfg.density; cells],
            vel: vec![Vector3::zeros(); cells],
            class: vec![NodeClass::Fluid; cells],
            prev_class: vec![NodeClass::Fluid; cells],
            links: Vec::new(),
            link_exchange: Vec::new(),
            staged_returns: Vec::new(),
            fresh: Vec::new(),
            fresh_lookup: vec![-1; cells],
            plain_bounce_fallbacks: 0,
        };
        field.initialize_uniform(cfg.density, Vector3::zeros());
        Ok(field)
    }

    pub fn spec(&self) -> &LatticeSpec<T> {
        &self.spec
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn cell_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn origin(&self) -> Point3<T> {
        self.origin
    }

    pub fn boundary_conditions(&self) -> [AxisBc; 3] {
        self.bc
    }

    pub fn boundary_links(&self) -> &[BoundaryLink<T>] {
        &self.links
    }

    /// Count of links and pulls that degraded to plain bounce-back since the
    /// last classification.
    pub fn plain_bounce_fallbacks(&self) -> usize {
        self.plain_bounce_fallbacks
    }

    pub fn fresh_node_count(&self) -> usize {
        self.fresh.len()
    }

    pub fn cell_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    pub fn cell_coords(&self, cell: usize) -> [usize; 3] {
        let ix = cell % self.dims[0];
        let rest = cell / self.dims[0];
        [ix, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Physical center of a node; node (0,0,0) sits half a cell inside the
    /// domain corner at `origin`.
    pub fn node_center(&self, ix: usize, iy: usize, iz: usize) -> Point3<T> {
        let h = self.spec.dx();
        let half = real::<T>(0.5);
        self.origin
            + Vector3::new(
                (real::<T>(ix as f64) + half) * h,
                (real::<T>(iy as f64) + half) * h,
                (real::<T>(iz as f64) + half) * h,
            )
    }

    /// Physical extent of the domain box.
    pub fn domain_extent(&self) -> Vector3<T> {
        let h = self.spec.dx();
        Vector3::new(
            real::<T>(self.dims[0] as f64) * h,
            real::<T>(self.dims[1] as f64) * h,
            real::<T>(self.dims[2] as f64) * h,
        )
    }

    pub fn node_class(&self, ix: usize, iy: usize, iz: usize) -> NodeClass {
        self.class[self.cell_index(ix, iy, iz)]
    }

    /// Raw distribution value, exposed for diagnostics and boundary-rule
    /// verification.
    pub fn distribution(&self, cell: usize, dir: usize) -> T {
        self.g[cell * self.spec.velocity_set().count() + dir]
    }

    pub(super) fn set_distribution(&mut self, cell: usize, dir: usize, value: T) {
        let q = self.spec.velocity_set().count();
        self.g[cell * q + dir] = value;
    }

    /// Density at a node recomputed from the distributions.
    pub fn density_at(&self, cell: usize) -> T {
        let q = self.spec.velocity_set().count();
        let mut rho = T::zero();
        for i in 0..q {
            rho += self.g[cell * q + i];
        }
        rho
    }

    /// Velocity at a node recomputed from the distributions (momentum moment
    /// over density; no forcing shift).
    pub fn velocity_at(&self, cell: usize) -> Vector3<T> {
        let q = self.spec.velocity_set().count();
        let mut m = Vector3::zeros();
        let mut rho = T::zero();
        for i in 0..q {
            let gi = self.g[cell * q + i];
            rho += gi;
            m += self.spec.velocity(i) * gi;
        }
        m / rho
    }

    /// Macroscopic velocity cached at the last collision (includes the
    /// half-step forcing shift).
    pub fn cached_velocity(&self, cell: usize) -> Vector3<T> {
        self.vel[cell]
    }

    pub fn cached_density(&self, cell: usize) -> T {
        self.rho[cell]
    }

    /// Total fluid mass over non-solid cells, in kg.
    pub fn total_mass(&self) -> T {
        let h = self.spec.dx();
        let cell_volume = h * h * h;
        let mut sum = T::zero();
        for cell in 0..self.cell_count() {
            if !self.class[cell].is_solid() {
                sum += self.density_at(cell);
            }
        }
        sum * cell_volume
    }

    /// Total fluid momentum over non-solid cells, from the raw first moment
    /// of the distributions (no body-force half-shift), in kg·m/s.
    pub fn total_momentum(&self) -> Vector3<T> {
        let spec = self.spec;
        let q = spec.velocity_set().count();
        let h = spec.dx();
        let cell_volume = h * h * h;
        let mut sum = Vector3::zeros();
        for cell in 0..self.cell_count() {
            if self.class[cell].is_solid() {
                continue;
            }
            for i in 0..q {
                sum += spec.velocity(i) * self.g[cell * q + i];
            }
        }
        sum * cell_volume
    }

    /// Overwrite every cell with the equilibrium for (`rho`, `u`) and refresh
    /// the macroscopic caches.
    pub fn initialize_uniform(&mut self, rho: T, u: Vector3<T>) {
        let q = self.spec.velocity_set().count();
        for i in 0..q {
            let geq = self.spec.equilibrium(i, rho, &u);
            for cell in 0..self.cell_count() {
                self.g[cell * q + i] = geq;
            }
        }
        self.rho.fill(rho);
        self.vel.fill(u);
    }

    /// Initialize each cell to equilibrium with a per-cell velocity.
    pub fn initialize_with<F>(&mut self, rho: T, mut velocity: F)
    where
        F: FnMut(Point3<T>) -> Vector3<T>,
    {
        let q = self.spec.velocity_set().count();
        for cell in 0..self.cell_count() {
            let [ix, iy, iz] = self.cell_coords(cell);
            let u = velocity(self.node_center(ix, iy, iz));
            for i in 0..q {
                self.g[cell * q + i] = self.spec.equilibrium(i, rho, &u);
            }
            self.rho[cell] = rho;
            self.vel[cell] = u;
        }
    }

    /// Resolve where the pull along `dir` into `cell` sources from,
    /// consulting domain closure and the current node classes.
    pub(super) fn pull_source(&self, cell: usize, dir: usize) -> PullSource {
        resolve_pull(
            self.dims,
            self.bc,
            self.spec.velocity_set(),
            &self.class,
            &self.fresh_lookup,
            cell,
            dir,
        )
    }

    /// BGK collision with Guo forcing at every participating (non-solid,
    /// non-fresh) node; refreshes the macroscopic caches.
    pub fn collide(&mut self, cfg: &FluidConfig<T>) -> Result<(), LbmError> {
        let tau = cfg.relaxation_time(&self.spec)?;
        let spec = self.spec;
        let set = spec.velocity_set();
        let q = set.count();
        let dt = spec.dt();
        let c2 = spec.lattice_speed() * spec.lattice_speed();
        let a = cfg.body_acceleration;
        let has_force = a != Vector3::zeros();
        let inv_tau = T::one() / tau;
        let force_scale = T::one() - real::<T>(0.5) * inv_tau;
        let half_dt = real::<T>(0.5) * dt;
        let three = real::<T>(3.0);
        let nine = real::<T>(9.0);
        let dims = self.dims;
        let class = &self.class;
        let fresh_lookup = &self.fresh_lookup;

        self.g
            .par_chunks_exact_mut(q)
            .zip(self.rho.par_iter_mut())
            .zip(self.vel.par_iter_mut())
            .enumerate()
            .try_for_each(|(cell, ((row, rho_out), vel_out))| {
                if class[cell].is_solid() || fresh_lookup[cell] >= 0 {
                    return Ok(());
                }
                let mut rho = T::zero();
                let mut momentum = Vector3::zeros();
                for (i, &gi) in row.iter().enumerate() {
                    if !gi.is_finite() {
                        let [x, y, z] = coords_of(cell, dims);
                        return Err(LbmError::NonFiniteDistribution { x, y, z, direction: i });
                    }
                    rho += gi;
                    momentum += spec.velocity(i) * gi;
                }
                if !(rho > T::zero()) {
                    let [x, y, z] = coords_of(cell, dims);
                    return Err(LbmError::NegativeDensity {
                        x,
                        y,
                        z,
                        rho: rho.to_f64().unwrap_or(f64::NAN),
                    });
                }
                let u = (momentum + a * (rho * half_dt)) / rho;
                *rho_out = rho;
                *vel_out = u;
                for (i, gi) in row.iter_mut().enumerate() {
                    let geq = spec.equilibrium(i, rho, &u);
                    let mut value = *gi - (*gi - geq) * inv_tau;
                    if has_force {
                        let e = spec.velocity(i);
                        let eu = e.dot(&u);
                        let source = spec.weight(i)
                            * rho
                            * (three * (e - u).dot(&a) / c2 + nine * eu * e.dot(&a) / (c2 * c2));
                        value += force_scale * source * dt;
                    }
                    *gi = value;
                }
                Ok(())
            })
    }

    /// Pull streaming into the back buffer, halfway bounce-back at wall
    /// faces, then overwrite link directions with the staged interpolated
    /// bounce-back returns. Pulls from fresh cells degrade to plain
    /// bounce-back against the vacating particle's surface velocity.
    pub fn stream(&mut self, cfg: &FluidConfig<T>) {
        let spec = self.spec;
        let set = spec.velocity_set();
        let q = set.count();
        let c2 = spec.lattice_speed() * spec.lattice_speed();
        let six = real::<T>(6.0);
        let rho0 = cfg.density;

        let dims = self.dims;
        let bc = self.bc;
        let g = &self.g;
        let class = &self.class;
        let fresh_lookup = &self.fresh_lookup;
        let fresh = &self.fresh;
        let fallbacks: usize = self
            .g_back
            .par_chunks_exact_mut(q)
            .enumerate()
            .map(|(cell, row)| {
                if class[cell].is_solid() {
                    row.copy_from_slice(&g[cell * q..cell * q + q]);
                    return 0usize;
                }
                let mut local_fallbacks = 0usize;
                let own_fresh = fresh_lookup[cell] >= 0;
                for (i, slot) in row.iter_mut().enumerate() {
                    *slot = match resolve_pull(dims, bc, set, class, fresh_lookup, cell, i) {
                        PullSource::Cell(src) => g[src * q + i],
                        PullSource::OwnBounce if !own_fresh => g[cell * q + set.opposite(i)],
                        PullSource::BlockedFresh(f) if !own_fresh => {
                            // The covering surface just moved past the
                            // upwind node; bounce against it once more.
                            local_fallbacks += 1;
                            let u_w = fresh[f].wall_velocity;
                            let e = spec.velocity(i);
                            g[cell * q + set.opposite(i)]
                                + six * spec.weight(i) * rho0 * e.dot(&u_w) / c2
                        }
                        // Solid upwind at a participating node is covered
                        // by a staged link return; fresh nodes keep the
                        // stale value for refill to replace.
                        _ => g[cell * q + i],
                    };
                }
                local_fallbacks
            })
            .sum();
        self.plain_bounce_fallbacks += fallbacks;
        std::mem::swap(&mut self.g, &mut self.g_back);
        for &(cell, dir, value) in &self.staged_returns {
            self.g[cell * q + dir] = value;
        }
    }

    /// Collision followed by streaming; with no particles present this is
    /// the complete update of a step.
    pub fn collide_stream(&mut self, cfg: &FluidConfig<T>) -> Result<(), LbmError> {
        self.collide(cfg)?;
        self.apply_ibb(cfg)?;
        self.stream(cfg);
        Ok(())
    }

    /// Trilinear interpolation of the cached velocity at a physical point;
    /// coordinates are clamped to the node-center box.
    pub fn sample_velocity(&self, point: &Point3<T>) -> Vector3<T> {
        let h = self.spec.dx();
        let half = real::<T>(0.5);
        let mut idx = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for axis in 0..3 {
            let coord = (point[axis] - self.origin[axis]) / h - half;
            let max_node = real::<T>((self.dims[axis] - 1) as f64);
            let clamped = coord.max(T::zero()).min(max_node);
            let base = clamped.floor().min(max_node - T::one()).max(T::zero());
            idx[axis] = base.to_usize().unwrap_or(0);
            if self.dims[axis] == 1 {
                idx[axis] = 0;
                frac[axis] = T::zero();
            } else {
                frac[axis] = clamped - base;
            }
        }
        let mut out = Vector3::zeros();
        for corner in 0..8usize {
            let mut weight = T::one();
            let mut node = [0usize; 3];
            for axis in 0..3 {
                let hi = (corner >> axis) & 1 == 1;
                if hi {
                    weight *= frac[axis];
                    node[axis] = (idx[axis] + 1).min(self.dims[axis] - 1);
                } else {
                    weight *= T::one() - frac[axis];
                    node[axis] = idx[axis];
                }
            }
            out += self.vel[self.cell_index(node[0], node[1], node[2])] * weight;
        }
        out
    }
}

fn coords_of(cell: usize, dims: [usize; 3]) -> [usize; 3] {
    let ix = cell % dims[0];
    let rest = cell / dims[0];
    [ix, rest % dims[1], rest / dims[1]]
}

#[allow(clippy::too_many_arguments)]
pub(super) fn resolve_pull(
    dims: [usize; 3],
    bc: [AxisBc; 3],
    set: crate::lbm::VelocitySet,
    class: &[NodeClass],
    fresh_lookup: &[i32],
    cell: usize,
    dir: usize,
) -> PullSource {
    let d = set.direction(dir);
    let [ix, iy, iz] = coords_of(cell, dims);
    let mut src = [
        ix as i64 - d[0] as i64,
        iy as i64 - d[1] as i64,
        iz as i64 - d[2] as i64,
    ];
    for axis in 0..3 {
        let n = dims[axis] as i64;
        if src[axis] < 0 || src[axis] >= n {
            match bc[axis] {
                AxisBc::Walls => return PullSource::OwnBounce,
                AxisBc::Periodic => src[axis] = src[axis].rem_euclid(n),
            }
        }
    }
    let idx = src[0] as usize + dims[0] * (src[1] as usize + dims[1] * src[2] as usize);
    if class[idx].is_solid() {
        PullSource::BlockedSolid
    } else if fresh_lookup[idx] >= 0 {
        PullSource::BlockedFresh(fresh_lookup[idx] as usize)
    } else {
        PullSource::Cell(idx)
    }
}

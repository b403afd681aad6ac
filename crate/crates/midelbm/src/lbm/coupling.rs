//! Moving-body coupling: node classification against implicit surfaces,
//! interpolated bounce-back at the cut links, momentum exchange, and the
//! reconstruction of nodes a receding body uncovers.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::field::{resolve_pull, FreshNode, PullSource};
use super::{FluidConfig, LatticeField, LbmError, NodeClass};
use crate::geometry::{Aabb, GeometryError, Metaball};
use crate::{real, Real};

/// Field threshold c₀ used to classify lattice nodes against a dilated
/// surface: the field value one sphero radius outward from the surface along
/// the outward normal. Shapes without a dilation radius classify at the
/// surface level itself. The reference point is tied to the control-point
/// layout, so the result is invariant under rigid motion of the shape.
pub fn hydrodynamic_surface_level<T: Real>(shape: &Metaball<T>) -> Result<T, LbmError> {
    let rs = shape.sphero_radius();
    if rs == T::zero() {
        return Ok(shape.surface_level());
    }
    let centroid = shape.weighted_centroid();
    let mut dir = shape.control_points()[0].position - centroid;
    if dir.norm() < real::<T>(1e-12) * shape.scale().max(T::one()) {
        dir = Vector3::x();
    }
    let dir = dir.normalize();
    let bbox = shape.bounding_box(T::zero());
    let mut reach_sq = T::zero();
    for axis in 0..3 {
        let lo = (bbox.min[axis] - centroid[axis]).abs();
        let hi = (bbox.max[axis] - centroid[axis]).abs();
        let m = lo.max(hi);
        reach_sq += m * m;
    }
    let start = reach_sq.sqrt() * real::<T>(1.001) + rs;
    let origin = centroid + dir * start;
    let t = shape
        .ray_surface_parameter(&origin, &(-dir), shape.surface_level(), start)?
        .ok_or_else(|| LbmError::InvalidSpec {
            what: "no surface crossing found while deriving the classification level".to_string(),
        })?;
    let on_surface = origin - dir * t;
    let grad = shape.gradient(&on_surface)?;
    let outward = -grad
        .try_normalize(real::<T>(1e-300))
        .ok_or_else(|| LbmError::InvalidSpec {
            what: "vanishing field gradient at the reference surface point".to_string(),
        })?;
    Ok(shape.evaluate(&(on_surface + outward * rs))?)
}

/// The solid region the classifier assigns to `shape`, rewritten as the
/// level-one set of a plain metaball: scaling every weight by 1/c₀ turns
/// {f ≥ c₀} into {f/c₀ ≥ 1}, which folds the sphero dilation into the
/// weights. Volume integration and surface meshing of the rewritten shape
/// then see exactly the region the fluid treats as solid.
pub fn hydrodynamic_region<T: Real>(shape: &Metaball<T>) -> Result<Metaball<T>, LbmError> {
    let level = hydrodynamic_surface_level(shape)?;
    if !(level > T::zero()) || !level.is_finite() {
        return Err(LbmError::InvalidSpec {
            what: format!(
                "classification level must be positive, got {}",
                level.to_f64().unwrap_or(f64::NAN)
            ),
        });
    }
    let scaled = shape
        .control_points()
        .iter()
        .map(|cp| crate::geometry::ControlPoint::new(cp.position, cp.weight / level))
        .collect();
    Ok(Metaball::new(scaled, T::zero())?)
}

/// Rigid body immersed in the lattice: a world-posed shape plus the motion
/// state needed for wall velocities and fresh-node reconstruction.
#[derive(Debug, Clone)]
pub struct ImmersedBody<T: Real> {
    pub shape: Metaball<T>,
    /// Center of rotation (the mass center of the rigid body).
    pub centroid: Point3<T>,
    pub velocity: Vector3<T>,
    pub angular_velocity: Vector3<T>,
}

impl<T: Real> ImmersedBody<T> {
    pub fn velocity_at(&self, point: &Point3<T>) -> Vector3<T> {
        self.velocity + self.angular_velocity.cross(&(point - self.centroid))
    }
}

/// Axis-aligned box certain to contain the region f ≥ level, grown by
/// `margin`. The shape's own bounding box covers f ≥ surface level only, and
/// the classification level sits below that.
fn classification_box<T: Real>(shape: &Metaball<T>, level: T, margin: T) -> Aabb<T> {
    let n = real::<T>(shape.control_points().len() as f64);
    let mut aabb: Option<Aabb<T>> = None;
    for cp in shape.control_points() {
        let r = (n * cp.weight.max(T::zero()) / level).sqrt() + margin;
        let b = Aabb::from_point(cp.position).dilated(r);
        aabb = Some(match aabb {
            Some(a) => a.union(&b),
            None => b,
        });
    }
    aabb.expect("metaball has control points")
}

impl<T: Real> LatticeField<T> {
    /// Inclusive index ranges of the node centers inside `aabb`, or None when
    /// the box misses the domain.
    fn cell_range(&self, aabb: &Aabb<T>) -> Option<([usize; 3], [usize; 3])> {
        let h = self.spec().dx();
        let origin = self.origin();
        let half = real::<T>(0.5);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for axis in 0..3 {
            let n = self.dims()[axis];
            let lo_f = ((aabb.min[axis] - origin[axis]) / h - half).ceil();
            let hi_f = ((aabb.max[axis] - origin[axis]) / h - half).floor();
            let lo_i = lo_f.to_f64().unwrap_or(0.0).max(0.0) as usize;
            let hi_f64 = hi_f.to_f64().unwrap_or(-1.0);
            if hi_f64 < lo_i as f64 || lo_i >= n {
                return None;
            }
            lo[axis] = lo_i;
            hi[axis] = (hi_f64 as usize).min(n - 1);
        }
        Some((lo, hi))
    }

    /// Neighbor cell one lattice direction forward, wrapping periodic axes;
    /// None past a wall face.
    fn forward_neighbor(&self, coords: [usize; 3], dir: usize) -> Option<usize> {
        let d = self.spec().velocity_set().direction(dir);
        let dims = self.dims();
        let bc = self.boundary_conditions();
        let mut dst = [
            coords[0] as i64 + d[0] as i64,
            coords[1] as i64 + d[1] as i64,
            coords[2] as i64 + d[2] as i64,
        ];
        for axis in 0..3 {
            let n = dims[axis] as i64;
            if dst[axis] < 0 || dst[axis] >= n {
                match bc[axis] {
                    super::AxisBc::Walls => return None,
                    super::AxisBc::Periodic => dst[axis] = dst[axis].rem_euclid(n),
                }
            }
        }
        Some(self.cell_index(dst[0] as usize, dst[1] as usize, dst[2] as usize))
    }

    /// Reclassify every node against the given bodies and rebuild the cut
    /// links. Nodes a body vacated since the previous classification are
    /// recorded for reconstruction after the next streaming step. Earlier
    /// bodies win where solid regions overlap.
    pub fn classify(&mut self, bodies: &[ImmersedBody<T>]) -> Result<(), LbmError> {
        std::mem::swap(&mut self.class, &mut self.prev_class);
        self.class.fill(NodeClass::Fluid);
        self.links.clear();
        self.link_exchange.clear();
        self.staged_returns.clear();
        self.fresh.clear();
        self.fresh_lookup.fill(-1);
        self.plain_bounce_fallbacks = 0;

        let h = self.spec().dx();
        let mut levels = Vec::with_capacity(bodies.len());
        for body in bodies {
            levels.push(hydrodynamic_surface_level(&body.shape)?);
        }

        for (b, body) in bodies.iter().enumerate() {
            let range = self.cell_range(&classification_box(&body.shape, levels[b], h));
            let Some((lo, hi)) = range else { continue };
            for iz in lo[2]..=hi[2] {
                for iy in lo[1]..=hi[1] {
                    for ix in lo[0]..=hi[0] {
                        let cell = self.cell_index(ix, iy, iz);
                        if self.class[cell].is_solid() {
                            continue;
                        }
                        let center = self.node_center(ix, iy, iz);
                        let inside = match body.shape.evaluate(&center) {
                            Ok(f) => f >= levels[b],
                            Err(GeometryError::SingularEvaluation { .. }) => true,
                            Err(e) => return Err(e.into()),
                        };
                        if inside {
                            self.class[cell] = NodeClass::Solid { particle: b as u32 };
                        }
                    }
                }
            }
        }

        // A streaming wrap would connect the two sides of a body that pokes
        // through a periodic face, so reject solid nodes in the outermost
        // layer of any periodic axis.
        let dims = self.dims();
        let bc = self.boundary_conditions();
        for cell in 0..self.cell_count() {
            let NodeClass::Solid { particle } = self.class[cell] else {
                continue;
            };
            let coords = self.cell_coords(cell);
            for axis in 0..3 {
                if bc[axis] == super::AxisBc::Periodic
                    && dims[axis] > 1
                    && (coords[axis] == 0 || coords[axis] == dims[axis] - 1)
                {
                    return Err(LbmError::BodyOnPeriodicFace {
                        body: particle as usize,
                    });
                }
            }
        }

        for cell in 0..self.cell_count() {
            let NodeClass::Solid { particle } = self.prev_class[cell] else {
                continue;
            };
            if self.class[cell].is_solid() {
                continue;
            }
            let [ix, iy, iz] = self.cell_coords(cell);
            let wall_velocity = match bodies.get(particle as usize) {
                Some(body) => body.velocity_at(&self.node_center(ix, iy, iz)),
                None => Vector3::zeros(),
            };
            self.fresh_lookup[cell] = self.fresh.len() as i32;
            self.fresh.push(FreshNode {
                cell,
                wall_velocity,
            });
        }

        let q = self.spec().velocity_set().count();
        for (b, body) in bodies.iter().enumerate() {
            let box_with_halo =
                classification_box(&body.shape, levels[b], h).dilated(h * real::<T>(2.0));
            let Some((lo, hi)) = self.cell_range(&box_with_halo) else {
                continue;
            };
            for iz in lo[2]..=hi[2] {
                for iy in lo[1]..=hi[1] {
                    for ix in lo[0]..=hi[0] {
                        let cell = self.cell_index(ix, iy, iz);
                        if self.class[cell] != NodeClass::Fluid {
                            continue;
                        }
                        let mut cut = false;
                        for dir in 1..q {
                            let Some(neighbor) = self.forward_neighbor([ix, iy, iz], dir) else {
                                continue;
                            };
                            let NodeClass::Solid { particle } = self.class[neighbor] else {
                                continue;
                            };
                            self.push_link(cell, [ix, iy, iz], dir, particle, bodies, &levels)?;
                            cut = true;
                        }
                        if cut {
                            self.class[cell] = NodeClass::Boundary;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn push_link(
        &mut self,
        cell: usize,
        coords: [usize; 3],
        dir: usize,
        particle: u32,
        bodies: &[ImmersedBody<T>],
        levels: &[T],
    ) -> Result<(), LbmError> {
        let spec = *self.spec();
        let set = spec.velocity_set();
        let d = set.direction(dir);
        let offset = Vector3::new(
            real::<T>(d[0] as f64),
            real::<T>(d[1] as f64),
            real::<T>(d[2] as f64),
        ) * spec.dx();
        let length = offset.norm();
        let x_f = self.node_center(coords[0], coords[1], coords[2]);
        let body = &bodies[particle as usize];
        let crossing = match body
            .shape
            .ray_surface_parameter(&x_f, &offset, levels[particle as usize], length)
        {
            Ok(hit) => hit,
            Err(GeometryError::SingularEvaluation { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        let link = match crossing {
            Some(t) => {
                let q_frac = t / length;
                let wall_point = x_f + offset * q_frac;
                super::BoundaryLink {
                    cell,
                    direction: dir,
                    q: q_frac,
                    wall_point,
                    wall_velocity: body.velocity_at(&wall_point),
                    particle,
                    interpolated: true,
                }
            }
            None => {
                // The node sees a solid neighbor but the surface crossing
                // could not be bracketed; fall back to plain bounce-back at
                // the midpoint.
                self.plain_bounce_fallbacks += 1;
                let wall_point = x_f + offset * real::<T>(0.5);
                super::BoundaryLink {
                    cell,
                    direction: dir,
                    q: real::<T>(0.5),
                    wall_point,
                    wall_velocity: body.velocity_at(&wall_point),
                    particle,
                    interpolated: false,
                }
            }
        };
        self.links.push(link);
        Ok(())
    }

    /// Compute the post-streaming returns for every cut link from the
    /// post-collision state, staging them for `stream` to write, and cache
    /// the per-link exchanged distributions for `momentum_exchange`.
    ///
    /// The return combines a quadratic velocity interpolation toward the wall
    /// with the bounced wall-velocity term; links whose second upwind node is
    /// unavailable degrade to plain bounce-back.
    pub fn apply_ibb(&mut self, cfg: &FluidConfig<T>) -> Result<(), LbmError> {
        self.staged_returns.clear();
        self.link_exchange.clear();
        if self.links.is_empty() {
            return Ok(());
        }
        let spec = *self.spec();
        let set = spec.velocity_set();
        let q = set.count();
        let c2 = spec.lattice_speed() * spec.lattice_speed();
        let six = real::<T>(6.0);
        let half = real::<T>(0.5);
        let one = T::one();
        let two = real::<T>(2.0);
        let third = one / real::<T>(3.0);
        let rho_ref = cfg.density;
        let dims = self.dims();
        let bc = self.boundary_conditions();
        let g = &self.g;
        let rho = &self.rho;
        let vel = &self.vel;
        let class = &self.class;
        let fresh_lookup = &self.fresh_lookup;
        let fresh = &self.fresh;

        let results: Vec<(T, T, bool)> = self
            .links
            .par_iter()
            .map(|link| {
                let cell = link.cell;
                let to_wall = link.direction;
                let ret = set.opposite(to_wall);
                let u_w = link.wall_velocity;
                let bounce_shift = six * spec.weight(to_wall) * rho_ref
                    * spec.velocity(ret).dot(&u_w)
                    / c2;
                if fresh_lookup[cell] >= 0 {
                    // A vacated node has no post-collision state yet; stand in
                    // with the reconstruction equilibrium so the link still
                    // takes part in the momentum balance.
                    let u_fresh = fresh[fresh_lookup[cell] as usize].wall_velocity;
                    let g_out = spec.equilibrium(to_wall, rho_ref, &u_fresh);
                    return (g_out, g_out + bounce_shift, true);
                }
                let g_out = g[cell * q + to_wall];
                let plain = g_out + bounce_shift;
                if !link.interpolated {
                    return (g_out, plain, false);
                }
                let upwind = resolve_pull(dims, bc, set, class, fresh_lookup, cell, to_wall);
                let PullSource::Cell(ff) = upwind else {
                    return (g_out, plain, true);
                };
                let qf = link.q;
                let u_f = vel[cell];
                let u_ff = vel[ff];
                let rho_f = rho[cell];
                let u_single = if qf <= half {
                    u_f * (two * qf) + u_ff * (one - two * qf)
                } else {
                    u_f * ((one - qf) / qf) + u_w * ((two * qf - one) / qf)
                };
                let u_double = u_ff * ((one - qf) / (one + qf)) + u_w * (two * qf / (one + qf));
                let u_d = (u_single + u_double * two) * third;
                let g_dressed = spec.equilibrium(to_wall, rho_f, &u_d)
                    + (g_out - spec.equilibrium(to_wall, rho_f, &u_f));
                (g_out, g_dressed + bounce_shift, false)
            })
            .collect();

        let mut fallbacks = 0usize;
        let mut staged = Vec::with_capacity(results.len());
        let mut exchange = Vec::with_capacity(results.len());
        for (link, &(g_out, g_ret, fell_back)) in self.links.iter().zip(&results) {
            staged.push((link.cell, set.opposite(link.direction), g_ret));
            exchange.push((g_out, g_ret));
            fallbacks += fell_back as usize;
        }
        self.staged_returns = staged;
        self.link_exchange = exchange;
        self.plain_bounce_fallbacks += fallbacks;
        Ok(())
    }

    /// Hydrodynamic force and torque on each body from the distributions
    /// exchanged across its cut links this step, summed in link order.
    /// Torques are taken about the provided centers.
    pub fn momentum_exchange(&self, centers: &[Point3<T>]) -> Vec<(Vector3<T>, Vector3<T>)> {
        let mut out = vec![(Vector3::zeros(), Vector3::zeros()); centers.len()];
        if self.link_exchange.is_empty() {
            return out;
        }
        debug_assert_eq!(self.links.len(), self.link_exchange.len());
        let spec = *self.spec();
        let set = spec.velocity_set();
        let dx = spec.dx();
        let scale = dx * dx * dx / spec.dt();
        for (link, &(g_out, g_ret)) in self.links.iter().zip(&self.link_exchange) {
            let p = link.particle as usize;
            if p >= out.len() {
                continue;
            }
            let e_out = spec.velocity(link.direction);
            let e_ret = spec.velocity(set.opposite(link.direction));
            let dp = ((e_out - link.wall_velocity) * g_out - (e_ret - link.wall_velocity) * g_ret)
                * scale;
            out[p].0 += dp;
            out[p].1 += (link.wall_point - centers[p]).cross(&dp);
        }
        out
    }

    /// Rebuild the distributions of nodes a body vacated, after streaming.
    /// Directions streamed in from participating neighbors are kept; a
    /// missing direction with a valid opposite is bounced against the old
    /// wall velocity; the rest are set to equilibrium at the reference
    /// density and that velocity.
    pub fn refill(&mut self, cfg: &FluidConfig<T>) -> Result<(), LbmError> {
        if self.fresh.is_empty() {
            return Ok(());
        }
        let spec = *self.spec();
        let set = spec.velocity_set();
        let q = set.count();
        let c2 = spec.lattice_speed() * spec.lattice_speed();
        let six = real::<T>(6.0);
        let rho_ref = cfg.density;

        let mut rows: Vec<(usize, [T; 15])> = Vec::with_capacity(self.fresh.len());
        for f in 0..self.fresh.len() {
            let FreshNode {
                cell,
                wall_velocity,
            } = self.fresh[f];
            let mut valid = [false; 15];
            for i in 0..q {
                valid[i] = matches!(self.pull_source(cell, i), PullSource::Cell(_));
            }
            let mut row = [T::zero(); 15];
            let mut rho = T::zero();
            for (i, slot) in row.iter_mut().take(q).enumerate() {
                let op = set.opposite(i);
                *slot = if valid[i] {
                    self.distribution(cell, i)
                } else if valid[op] {
                    self.distribution(cell, op)
                        + six * spec.weight(i) * rho_ref * spec.velocity(i).dot(&wall_velocity)
                            / c2
                } else {
                    spec.equilibrium(i, rho_ref, &wall_velocity)
                };
                rho += *slot;
            }
            if !(rho > T::zero()) || !rho.is_finite() {
                let [x, y, z] = self.cell_coords(cell);
                return Err(LbmError::RefillNegativeDensity {
                    x,
                    y,
                    z,
                    rho: rho.to_f64().unwrap_or(f64::NAN),
                });
            }
            rows.push((cell, row));
        }
        for (cell, row) in rows {
            for (i, value) in row.into_iter().take(q).enumerate() {
                self.set_distribution(cell, i, value);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ControlPoint;
    use crate::lbm::{AxisBc, BoundaryLink, LatticeSpec, VelocitySet, Viscosity};
    use nalgebra::{Isometry3, Translation3, UnitQuaternion};

    fn sphere(weight: f64, sphero: f64, center: Point3<f64>) -> Metaball<f64> {
        Metaball::new(vec![ControlPoint::new(center, weight)], sphero).unwrap()
    }

    fn still_water() -> FluidConfig<f64> {
        FluidConfig {
            density: 1000.0,
            viscosity: Viscosity::Dynamic(1e-3),
            body_acceleration: Vector3::zeros(),
        }
    }

    fn held_body(shape: Metaball<f64>) -> ImmersedBody<f64> {
        let centroid = shape.weighted_centroid();
        ImmersedBody {
            shape,
            centroid,
            velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
        }
    }

    #[test]
    fn classification_level_of_a_dilated_sphere_is_analytic() {
        // A lone control point of weight 4 has its surface at radius 2; one
        // dilation radius 0.5 further out the field is 4 / 2.5^2.
        let shape: Metaball<f64> = sphere(4.0, 0.5, Point3::new(0.3, -0.2, 0.7));
        let c0 = hydrodynamic_surface_level(&shape).unwrap();
        assert!((c0 - 0.64).abs() < 1e-10, "c0 = {c0}");

        let bare = sphere(4.0, 0.0, Point3::origin());
        assert_eq!(hydrodynamic_surface_level(&bare).unwrap(), 1.0);
    }

    #[test]
    fn rewritten_region_has_its_level_one_set_on_the_dilated_surface() {
        let shape: Metaball<f64> = sphere(4.0, 0.5, Point3::new(0.3, -0.2, 0.7));
        let region = hydrodynamic_region(&shape).unwrap();
        assert_eq!(region.sphero_radius(), 0.0);
        let on_dilated = Point3::new(0.3 + 2.5, -0.2, 0.7);
        assert!((region.evaluate(&on_dilated).unwrap() - 1.0).abs() < 1e-10);

        // Multi-ball: any point where the raw field equals the
        // classification level must land on the rewritten level-one set.
        let blob: Metaball<f64> = Metaball::new(
            vec![
                ControlPoint::new(Point3::new(0.0, 0.0, 0.0), 1.0),
                ControlPoint::new(Point3::new(1.2, 0.4, -0.3), 2.0),
            ],
            0.25,
        )
        .unwrap();
        let c0 = hydrodynamic_surface_level(&blob).unwrap();
        let origin = Point3::new(8.0, -5.0, 3.0);
        let direction = blob.weighted_centroid() - origin;
        let t = blob
            .ray_surface_parameter(&origin, &direction, c0, direction.norm())
            .unwrap()
            .expect("the ray aims at the interior");
        let hit = origin + direction.normalize() * t;
        let region = hydrodynamic_region(&blob).unwrap();
        assert!((region.evaluate(&hit).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn classification_level_is_invariant_under_rigid_motion() {
        let shape: Metaball<f64> = Metaball::new(
            vec![
                ControlPoint::new(Point3::new(0.0, 0.0, 0.0), 1.0),
                ControlPoint::new(Point3::new(1.5, 0.3, -0.2), 2.0),
            ],
            0.3,
        )
        .unwrap();
        let c0 = hydrodynamic_surface_level(&shape).unwrap();
        let iso = Isometry3::from_parts(
            Translation3::new(-4.0, 2.5, 1.0),
            UnitQuaternion::from_euler_angles(0.7, -1.2, 2.9),
        );
        let moved = shape.transformed(&iso);
        let c0_moved = hydrodynamic_surface_level(&moved).unwrap();
        assert!(
            (c0 - c0_moved).abs() < 1e-9,
            "classification level moved from {c0} to {c0_moved}"
        );
    }

    #[test]
    fn solid_node_count_matches_the_dilated_volume() {
        let spec = LatticeSpec::<f64>::new(VelocitySet::D3Q15, 0.25, 0.05).unwrap();
        let cfg = still_water();
        let mut field = LatticeField::new(
            spec,
            [32, 32, 32],
            Point3::new(-4.0, -4.0, -4.0),
            [AxisBc::Periodic; 3],
            &cfg,
        )
        .unwrap();
        let body = held_body(sphere(4.0, 0.5, Point3::origin()));
        field.classify(std::slice::from_ref(&body)).unwrap();

        let mut solid = 0usize;
        let mut boundary = 0usize;
        for cell in 0..field.cell_count() {
            let [x, y, z] = field.cell_coords(cell);
            match field.node_class(x, y, z) {
                NodeClass::Solid { particle } => {
                    assert_eq!(particle, 0);
                    solid += 1;
                }
                NodeClass::Boundary => boundary += 1,
                NodeClass::Fluid => {}
            }
        }
        let h = field.spec().dx();
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 2.5f64.powi(3) / h.powi(3);
        let rel = (solid as f64 - analytic).abs() / analytic;
        assert!(rel < 0.05, "solid count {solid} vs {analytic:.1} ({rel:.3})");
        assert!(boundary > 0);
        assert_eq!(field.plain_bounce_fallbacks(), 0);
        for link in field.boundary_links() {
            assert!(link.q > 0.0 && link.q <= 1.0);
            assert!(link.interpolated);
        }
    }

    #[test]
    fn link_cut_fractions_solve_the_sphere_quadratic() {
        let spec = LatticeSpec::<f64>::new(VelocitySet::D3Q15, 0.25, 0.05).unwrap();
        let cfg = still_water();
        let mut field = LatticeField::new(
            spec,
            [32, 32, 32],
            Point3::new(-4.0, -4.0, -4.0),
            [AxisBc::Periodic; 3],
            &cfg,
        )
        .unwrap();
        let body = held_body(sphere(4.0, 0.5, Point3::origin()));
        field.classify(std::slice::from_ref(&body)).unwrap();
        assert!(!field.boundary_links().is_empty());

        let radius = 2.5f64;
        for link in field.boundary_links() {
            let [x, y, z] = field.cell_coords(link.cell);
            let x_f = field.node_center(x, y, z);
            let d = field.spec().velocity_set().direction(link.direction);
            let offset =
                Vector3::new(d[0] as f64, d[1] as f64, d[2] as f64) * field.spec().dx();
            let length = offset.norm();
            let unit = offset / length;
            let b_half = x_f.coords.dot(&unit);
            let c = x_f.coords.norm_squared() - radius * radius;
            let t_exact = -b_half - (b_half * b_half - c).sqrt();
            assert!(
                (link.q * length - t_exact).abs() < 1e-8,
                "link q {} vs exact fraction {}",
                link.q,
                t_exact / length
            );
            assert!((link.wall_point.coords.norm() - radius).abs() < 1e-8);
        }
    }

    #[test]
    fn rest_fluid_around_a_held_body_stays_at_rest() {
        let spec = LatticeSpec::<f64>::new(VelocitySet::D3Q15, 0.25, 0.05).unwrap();
        let cfg = still_water();
        let mut field = LatticeField::new(
            spec,
            [24, 24, 24],
            Point3::new(-3.0, -3.0, -3.0),
            [AxisBc::Periodic; 3],
            &cfg,
        )
        .unwrap();
        let body = held_body(sphere(1.0, 0.2, Point3::origin()));
        field.classify(std::slice::from_ref(&body)).unwrap();
        for _ in 0..10 {
            field.collide_stream(&cfg).unwrap();
        }
        let c = field.spec().lattice_speed();
        for cell in 0..field.cell_count() {
            let [x, y, z] = field.cell_coords(cell);
            if field.node_class(x, y, z).is_solid() {
                continue;
            }
            assert!((field.density_at(cell) - cfg.density).abs() < 1e-10 * cfg.density);
            assert!(field.velocity_at(cell).norm() < 1e-12 * c);
        }
        let n_links = field.boundary_links().len() as f64;
        let (force, torque) = field.momentum_exchange(&[Point3::origin()])[0];
        let h = field.spec().dx();
        let link_scale = cfg.density * c * h.powi(3) / field.spec().dt() * n_links;
        assert!(force.norm() < 1e-9 * link_scale, "spurious force {force:?}");
        assert!(torque.norm() < 1e-9 * link_scale, "spurious torque {torque:?}");
    }

    #[test]
    fn comoving_body_in_uniform_flow_feels_no_force() {
        let spec = LatticeSpec::<f64>::new(VelocitySet::D3Q15, 0.25, 0.05).unwrap();
        let cfg = still_water();
        let mut field = LatticeField::new(
            spec,
            [24, 24, 24],
            Point3::new(-3.0, -3.0, -3.0),
            [AxisBc::Periodic; 3],
            &cfg,
        )
        .unwrap();
        let c = field.spec().lattice_speed();
        let u0 = Vector3::new(0.03 * c, 0.0, 0.0);
        field.initialize_uniform(cfg.density, u0);
        let h = field.spec().dx();

        let mut center = Point3::new(-0.45, 0.0, 0.0);
        // Hop more than a cell per pass so reconstruction of uncovered nodes
        // participates as well.
        let hop = 1.2 * h;
        for _ in 0..3 {
            let body = ImmersedBody {
                shape: sphere(1.0, 0.0, center),
                centroid: center,
                velocity: u0,
                angular_velocity: Vector3::zeros(),
            };
            field.classify(std::slice::from_ref(&body)).unwrap();
            field.collide(&cfg).unwrap();
            field.apply_ibb(&cfg).unwrap();
            field.stream(&cfg);
            let (force, _) = field.momentum_exchange(&[center])[0];
            let n_links = field.boundary_links().len() as f64;
            let link_scale = cfg.density * c * h.powi(3) / field.spec().dt() * n_links;
            assert!(
                force.norm() < 1e-9 * link_scale,
                "net force {force:?} on a co-moving body"
            );
            field.refill(&cfg).unwrap();
            center += u0.normalize() * hop;
        }
        // The uniform state must have survived the body's passage exactly.
        for cell in 0..field.cell_count() {
            let [x, y, z] = field.cell_coords(cell);
            if field.node_class(x, y, z).is_solid() {
                continue;
            }
            assert!((field.density_at(cell) - cfg.density).abs() < 1e-9 * cfg.density);
            assert!((field.velocity_at(cell) - u0).norm() < 1e-9 * c);
        }
    }

    #[test]
    fn vacated_nodes_rebuild_the_rest_state() {
        let spec = LatticeSpec::<f64>::new(VelocitySet::D3Q15, 0.25, 0.05).unwrap();
        let cfg = still_water();
        let mut field = LatticeField::new(
            spec,
            [16, 16, 16],
            Point3::new(-2.0, -2.0, -2.0),
            [AxisBc::Periodic; 3],
            &cfg,
        )
        .unwrap();
        let body = held_body(sphere(1.0, 0.0, Point3::origin()));
        field.classify(std::slice::from_ref(&body)).unwrap();
        let solid_before = (0..field.cell_count())
            .filter(|&cell| {
                let [x, y, z] = field.cell_coords(cell);
                field.node_class(x, y, z).is_solid()
            })
            .count();
        assert!(solid_before > 0);
        field.collide(&cfg).unwrap();
        field.apply_ibb(&cfg).unwrap();
        field.stream(&cfg);
        field.refill(&cfg).unwrap();

        // The body disappears; every node it covered must be reconstructed.
        field.classify(&[]).unwrap();
        assert_eq!(field.fresh_node_count(), solid_before);
        field.collide(&cfg).unwrap();
        field.apply_ibb(&cfg).unwrap();
        field.stream(&cfg);
        field.refill(&cfg).unwrap();

        let q = field.spec().velocity_set().count();
        for cell in 0..field.cell_count() {
            for i in 0..q {
                let expected = field.spec().weight(i) * cfg.density;
                let got = field.distribution(cell, i);
                assert!(
                    (got - expected).abs() < 1e-12 * cfg.density,
                    "direction {i} at cell {cell}: {got} vs {expected}"
                );
            }
        }
        let volume = field.domain_extent().x * field.domain_extent().y * field.domain_extent().z;
        let mass = field.total_mass();
        assert!((mass - cfg.density * volume).abs() < 1e-9 * cfg.density * volume);
    }

    #[test]
    fn sheared_channel_with_a_moving_face_matches_the_linear_profile() {
        // Bottom: static wall face. Top: a manually assembled solid row with
        // interpolated links halfway into the last fluid row, sliding in x.
        let ny = 16usize;
        let spec = LatticeSpec::<f64>::new(VelocitySet::D2Q9, 0.01, 0.002).unwrap();
        let nu = (0.8 - 0.5) * spec.lattice_speed().powi(2) * spec.dt() / 3.0;
        let cfg = FluidConfig {
            density: 1000.0,
            viscosity: Viscosity::Kinematic(nu),
            body_acceleration: Vector3::zeros(),
        };
        let mut field = LatticeField::new(
            spec,
            [4, ny + 1, 1],
            Point3::origin(),
            [AxisBc::Periodic, AxisBc::Walls, AxisBc::Periodic],
            &cfg,
        )
        .unwrap();
        let c = field.spec().lattice_speed();
        let u_wall = Vector3::new(0.05 * c, 0.0, 0.0);
        let h = field.spec().dx();

        for ix in 0..4 {
            let cell = field.cell_index(ix, ny, 0);
            field.class[cell] = NodeClass::Solid { particle: 0 };
        }
        for ix in 0..4 {
            let cell = field.cell_index(ix, ny - 1, 0);
            field.class[cell] = NodeClass::Boundary;
            for dir in [3usize, 5, 8] {
                let d = field.spec().velocity_set().direction(dir);
                let offset = Vector3::new(d[0] as f64, d[1] as f64, d[2] as f64) * h;
                let x_f = field.node_center(ix, ny - 1, 0);
                field.links.push(BoundaryLink {
                    cell,
                    direction: dir,
                    q: 0.5,
                    wall_point: x_f + offset * 0.5,
                    wall_velocity: u_wall,
                    particle: 0,
                    interpolated: true,
                });
            }
        }

        for _ in 0..12_000 {
            field.collide(&cfg).unwrap();
            field.apply_ibb(&cfg).unwrap();
            field.stream(&cfg);
        }
        assert_eq!(field.plain_bounce_fallbacks(), 0);

        let height = ny as f64 * h;
        let mut err2 = 0.0;
        let mut ref2 = 0.0;
        for iy in 0..ny {
            let y = field.node_center(1, iy, 0).y;
            let expected = u_wall.x * y / height;
            let got = field.velocity_at(field.cell_index(1, iy, 0)).x;
            err2 += (got - expected).powi(2);
            ref2 += expected.powi(2);
        }
        let l2 = (err2 / ref2).sqrt();
        assert!(l2 < 0.01, "shear profile L2 error {l2:.5}");

        // The exchanged momentum must reproduce the viscous drag on the
        // sliding face: mu * (U / H) over the face area.
        let (force, _) = field.momentum_exchange(&[Point3::origin()])[0];
        let area = 4.0 * h * h;
        let expected_drag = -cfg.density * nu * u_wall.x / height * area;
        let rel = ((force.x - expected_drag) / expected_drag).abs();
        assert!(
            rel < 0.05,
            "drag {:.6e} vs {expected_drag:.6e} ({rel:.4})",
            force.x
        );
    }
}

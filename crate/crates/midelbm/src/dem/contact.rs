//! Narrow-phase contact resolution on metaball surfaces.
//!
//! Particle-particle proximity is found by Newton iteration on the stationary
//! point of f_a + f_b between the two bodies, then each body's surface point
//! is reached along its own gradient ray: a first-order step seeds a 1D
//! Newton solve (with a scan-and-bisect fallback) that lands on f = 1 to
//! high precision, which the sphere-oracle accuracy bounds require. Overlap
//! and the contact frame are then defined on the sphero-dilated surfaces.

use nalgebra::{Matrix2, Point3, Unit, Vector2, Vector3};

use super::{ContactParams, DemError, ParticleState};
use crate::geometry::Metaball;
use crate::{real, Real};

/// Convergence threshold on ‖∇(f_a + f_b)‖ for the pair search.
const PAIR_GRAD_TOL: f64 = 1e-10;
/// Field values this small mark a stationary point escaping to infinity.
const C_TOL: f64 = 1e-6;
/// Surface residual |f − 1| target for the gradient-ray projection.
const SURFACE_TOL: f64 = 1e-12;
const MAX_NEWTON_ITERS: usize = 50;

/// Closest-approach data between two metaballs: the stationary point of the
/// summed fields and the surface projections onto each body.
#[derive(Debug, Clone, Copy)]
pub struct ClosestPoints<T: Real> {
    /// Surface point on the first body (x_c0).
    pub on_a: Point3<T>,
    /// Surface point on the second body (x_c1).
    pub on_b: Point3<T>,
    /// Stationary point of f_a + f_b between the surfaces (x_m).
    pub midpoint: Point3<T>,
    /// (f_a, f_b) at the midpoint; a value above 1 means the cores overlap.
    pub field_at_midpoint: [T; 2],
}

#[derive(Debug, Clone, Copy)]
pub struct ContactInfo<T: Real> {
    /// Contact point, the midpoint of the overlapping sphero surfaces.
    pub point: Point3<T>,
    /// Unit normal pointing toward the first body of the pair.
    pub normal: Vector3<T>,
    /// Sphero-surface overlap depth, positive for an active contact.
    pub overlap: T,
    /// Accumulated tangential spring; persistent state owned by the caller.
    pub tangential_spring: Vector3<T>,
}

/// Infinite static wall. The outward normal points away from the solid wall,
/// toward the simulated domain.
#[derive(Debug, Clone, Copy)]
pub struct WallPlane<T: Real> {
    pub point: Point3<T>,
    pub outward_normal: Unit<Vector3<T>>,
}

impl<T: Real> WallPlane<T> {
    pub fn new(point: Point3<T>, outward_normal: Vector3<T>) -> Result<Self, DemError> {
        let norm = outward_normal.norm();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(DemError::BadWall);
        }
        Ok(Self {
            point,
            outward_normal: Unit::new_normalize(outward_normal),
        })
    }

    /// Signed distance of `x` along the outward normal.
    pub fn signed_distance(&self, x: &Point3<T>) -> T {
        self.outward_normal.dot(&(x - self.point))
    }
}

fn summed_gradient<T: Real>(
    a: &Metaball<T>,
    b: &Metaball<T>,
    x: &Point3<T>,
) -> Option<Vector3<T>> {
    match (a.gradient(x), b.gradient(x)) {
        (Ok(ga), Ok(gb)) => Some(ga + gb),
        _ => None,
    }
}

/// Locate the closest-approach points between two metaballs (world frame)
/// from `seed`, or `None` when the search fails to converge or the
/// stationary point escapes toward infinity (no meaningful proximity).
pub fn closest_points_pair<T: Real>(
    shape_a: &Metaball<T>,
    shape_b: &Metaball<T>,
    seed: Point3<T>,
) -> Option<ClosestPoints<T>> {
    let grad_tol = real::<T>(PAIR_GRAD_TOL);
    let mut x = seed;
    let mut g = summed_gradient(shape_a, shape_b, &x)?;
    for _ in 0..MAX_NEWTON_ITERS {
        if g.norm() < grad_tol {
            break;
        }
        let h = match (shape_a.hessian(&x), shape_b.hessian(&x)) {
            (Ok(ha), Ok(hb)) => ha + hb,
            _ => return None,
        };
        let step = h.lu().solve(&-g).unwrap_or(-g);
        // Halve the step until the gradient norm decreases; the target is a
        // saddle of the summed field, so the merit function is ‖∇‖ itself.
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = x + step * t;
            if let Some(gc) = summed_gradient(shape_a, shape_b, &candidate) {
                if gc.norm() < g.norm() {
                    x = candidate;
                    g = gc;
                    accepted = true;
                    break;
                }
            }
            t *= real::<T>(0.5);
        }
        if !accepted {
            log::debug!("pair closest-point search stalled; treating as non-contacting");
            return None;
        }
    }
    if !(g.norm() < grad_tol) {
        log::debug!("pair closest-point search did not converge in {MAX_NEWTON_ITERS} iterations");
        return None;
    }

    let f_a = shape_a.evaluate(&x).ok()?;
    let f_b = shape_b.evaluate(&x).ok()?;
    let c_tol = real::<T>(C_TOL);
    if f_a <= c_tol || f_b <= c_tol {
        return None;
    }
    let on_a = surface_projection(shape_a, &x, f_a)?;
    let on_b = surface_projection(shape_b, &x, f_b)?;
    Some(ClosestPoints {
        on_a,
        on_b,
        midpoint: x,
        field_at_midpoint: [f_a, f_b],
    })
}

/// Project `x` onto the f = 1 surface along the local gradient ray. The
/// first-order step (1 − f)/‖∇f‖ predicts the distance; a 1D Newton solve on
/// g(t) = 1/√f − 1 refines it. That substitution makes the iteration exactly
/// linear on a single ball (1/√f is the distance to the control point over
/// √k), so near-point cores with steep field spikes converge in one step
/// where Newton on f itself oscillates. Starting inside the core (f > 1) is
/// handled by the same iteration with a negative travel. A scan-and-bisect
/// fallback covers exotic multi-ball failures from outside.
fn surface_projection<T: Real>(shape: &Metaball<T>, x: &Point3<T>, f: T) -> Option<Point3<T>> {
    let g = shape.gradient(x).ok()?;
    let g_norm = g.norm();
    if !(g_norm > T::zero()) {
        return None;
    }
    let dir = g / g_norm;
    let predictor = (T::one() - f) / g_norm;

    let clamp = shape.scale();
    let tol = real::<T>(SURFACE_TOL);
    let half = real::<T>(0.5);
    let mut t_prev = T::zero();
    let mut t = predictor.min(clamp).max(-clamp);
    for _ in 0..60 {
        let p = x + dir * t;
        let f_p = match shape.evaluate(&p) {
            Ok(f_p) if f_p > T::zero() => f_p,
            // Landed on a control point; retreat toward the last valid spot.
            _ => {
                t = (t + t_prev) * half;
                continue;
            }
        };
        if (f_p - T::one()).abs() <= tol {
            return Some(p);
        }
        let slope = match shape.gradient(&p) {
            Ok(gp) => gp.dot(&dir),
            Err(_) => {
                t = (t + t_prev) * half;
                continue;
            }
        };
        let residual = f_p.sqrt().recip() - T::one();
        let d_residual = -slope * half / (f_p * f_p.sqrt());
        if !d_residual.is_finite() || d_residual.abs() < real::<T>(1e-300) {
            break;
        }
        let dt = (-residual / d_residual).min(clamp).max(-clamp);
        // The update estimates the remaining distance to the root; once it
        // falls to the roundoff floor of t the point cannot improve, even
        // though |f − 1| may stay above `tol` where the field is steep.
        if dt.abs() <= real::<T>(5e-15) * (T::one() + t.abs()) {
            return Some(p);
        }
        t_prev = t;
        t += dt;
    }
    if f >= T::one() {
        return None;
    }
    let max_t = clamp * real::<T>(3.0);
    let hit = shape
        .ray_surface_parameter(x, &dir, T::one(), max_t)
        .ok()??;
    Some(x + dir * hit)
}

/// Build the contact frame on the sphero-dilated surfaces from a
/// closest-points result. `None` when the dilated surfaces do not overlap;
/// an error when the cores themselves interpenetrate (contact model
/// invalid): the surface projections then sit on the far sides of each
/// other, detected by the separation opposing the gradient of the first
/// body's field. The error indices refer to argument order (a = 0, b = 1).
pub fn contact_pair<T: Real>(
    shape_a: &Metaball<T>,
    shape_b: &Metaball<T>,
    cp: &ClosestPoints<T>,
) -> Result<Option<ContactInfo<T>>, DemError> {
    let separation = cp.on_b - cp.on_a;
    let dist = separation.norm();
    if dist < real::<T>(1e-12) {
        return Err(DemError::DeepInterpenetration { a: 0, b: 1 });
    }
    if let Ok(grad_a) = shape_a.gradient(&cp.midpoint) {
        if separation.dot(&grad_a) >= T::zero() {
            return Err(DemError::DeepInterpenetration { a: 0, b: 1 });
        }
    }
    let overlap = shape_a.sphero_radius() + shape_b.sphero_radius() - dist;
    if overlap <= T::zero() {
        return Ok(None);
    }
    let normal = (cp.on_a - cp.on_b) / dist;
    let half = real::<T>(0.5);
    let point = cp.on_a - normal * (shape_a.sphero_radius() - overlap * half);
    Ok(Some(ContactInfo {
        point,
        normal,
        overlap,
        tangential_spring: Vector3::zeros(),
    }))
}

/// Contact of a metaball (world frame) against an infinite wall: a 2D Newton
/// search on the wall plane finds the point of strongest field, the
/// gradient ray from there lands on the body surface, and the sphero overlap
/// is measured along the wall normal.
pub fn contact_wall<T: Real>(
    shape: &Metaball<T>,
    wall: &WallPlane<T>,
) -> Option<ContactInfo<T>> {
    let n = wall.outward_normal.into_inner();
    // Broad phase: the support point of the bounding box along -n.
    let bounds = shape.bounding_box(T::zero());
    let center = bounds.center();
    let half_ext = bounds.extents() * real::<T>(0.5);
    let reach = n.x.abs() * half_ext.x + n.y.abs() * half_ext.y + n.z.abs() * half_ext.z;
    if wall.signed_distance(&center) - reach > T::zero() {
        return None;
    }

    // Tangent basis of the wall plane.
    let axis = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vector3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let t1 = n.cross(&axis).normalize();
    let t2 = n.cross(&t1);

    // Newton search for the in-plane stationary point of the field (the
    // point on the wall the body presses hardest against).
    let centroid = shape.weighted_centroid();
    let mut x = centroid - n * wall.signed_distance(&centroid);
    let grad_tol = real::<T>(PAIR_GRAD_TOL);
    let plane_grad = |p: &Point3<T>| -> Option<Vector2<T>> {
        let g = shape.gradient(p).ok()?;
        Some(Vector2::new(g.dot(&t1), g.dot(&t2)))
    };
    let mut g2 = plane_grad(&x)?;
    for _ in 0..MAX_NEWTON_ITERS {
        if g2.norm() < grad_tol {
            break;
        }
        let h = shape.hessian(&x).ok()?;
        let h11 = (h * t1).dot(&t1);
        let h12 = (h * t2).dot(&t1);
        let h22 = (h * t2).dot(&t2);
        let h2 = Matrix2::new(h11, h12, h12, h22);
        let step2 = h2.lu().solve(&-g2).unwrap_or(-g2);
        let step = t1 * step2.x + t2 * step2.y;
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = x + step * t;
            if let Some(gc) = plane_grad(&candidate) {
                if gc.norm() < g2.norm() {
                    x = candidate;
                    g2 = gc;
                    accepted = true;
                    break;
                }
            }
            t *= real::<T>(0.5);
        }
        if !accepted {
            log::debug!("wall contact search stalled; treating as non-contacting");
            return None;
        }
    }
    if !(g2.norm() < grad_tol) {
        log::debug!("wall contact search did not converge in {MAX_NEWTON_ITERS} iterations");
        return None;
    }

    let f = shape.evaluate(&x).ok()?;
    let closest = surface_projection(shape, &x, f)?;
    let signed = wall.signed_distance(&closest);
    let overlap = shape.sphero_radius() - signed;
    if overlap <= T::zero() {
        return None;
    }
    let half = real::<T>(0.5);
    let projection = closest - n * signed;
    Some(ContactInfo {
        point: projection + n * (overlap * half),
        normal: n,
        overlap,
        tangential_spring: Vector3::zeros(),
    })
}

/// Velocity of the material point of `state` currently at `point`.
pub fn point_velocity<T: Real>(state: &ParticleState<T>, point: &Point3<T>) -> Vector3<T> {
    state.velocity + state.angular_velocity.cross(&(point - state.position))
}

/// Spring-dashpot force on the first body of the contact, with the updated
/// tangential spring. `vel_a` and `vel_b` are the surface-point velocities at
/// the contact point (zero for a static wall). The normal part is clamped at
/// zero so damping never produces adhesion; the tangential part is capped by
/// the Coulomb cone, shrinking the spring back onto it when sliding.
pub fn contact_force<T: Real>(
    info: &ContactInfo<T>,
    vel_a: Vector3<T>,
    vel_b: Vector3<T>,
    params: &ContactParams<T>,
    dt: T,
) -> (Vector3<T>, Vector3<T>) {
    let n = info.normal;
    let v_rel = vel_a - vel_b;
    let v_n = v_rel.dot(&n);
    let fn_mag = (params.kn * info.overlap - params.eta_n * v_n).max(T::zero());

    let v_t = v_rel - n * v_n;
    // Carry the spring into the current contact plane before accumulating.
    let mut spring = info.tangential_spring - n * info.tangential_spring.dot(&n);
    spring += v_t * dt;
    let mut f_t = -spring * params.kt - v_t * params.eta_t;
    let cap = params.mu_s * fn_mag;
    let f_t_mag = f_t.norm();
    if f_t_mag > cap {
        f_t *= cap / f_t_mag;
        spring = -(f_t + v_t * params.eta_t) / params.kt;
    }
    (n * fn_mag + f_t, spring)
}

//! Metaball implicit surfaces: evaluation, derivatives, ray intersection and
//! integral mass properties.
//!
//! A metaball is f(x) = Σ_i k_i / ‖x − x̂_i‖² with the surface at f = 1
//! (f > 1 inside, f < 1 outside). A sphero-metaball is the same body dilated
//! by a sphere of radius `sphero_radius`; the dilation is consumed by the
//! contact and boundary code, not by `evaluate` itself.

use nalgebra::{Isometry3, Matrix3, Point3, Vector3};

use crate::{real, Real};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("metaball needs at least one control point")]
    NoControlPoints,
    #[error("control point {index} has non-finite position or weight")]
    NonFinite { index: usize },
    #[error("sphero radius must be finite and non-negative, got {value}")]
    InvalidSpheroRadius { value: f64 },
    #[error("evaluation point lies within the singular guard of control point {index}")]
    SingularEvaluation { index: usize },
    #[error("ray direction must be a nonzero finite vector")]
    InvalidDirection,
    #[error("mass-property integration needs resolution >= 32 per axis, got {resolution}")]
    ResolutionTooLow { resolution: usize },
    #[error("level set at {level} is empty on a {resolution}^3 integration grid")]
    EmptyLevelSet { level: f64, resolution: usize },
}

/// Weighted source point of the implicit function (x̂_i, k_i). The weight has
/// length² units; √k is the radius of the ball a lone control point produces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPoint<T: Real> {
    pub position: Point3<T>,
    pub weight: T,
}

impl<T: Real> ControlPoint<T> {
    pub fn new(position: Point3<T>, weight: T) -> Self {
        Self { position, weight }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T: Real> {
    pub min: Point3<T>,
    pub max: Point3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn new(min: Point3<T>, max: Point3<T>) -> Self {
        Self { min, max }
    }

    pub fn from_point(p: Point3<T>) -> Self {
        Self { min: p, max: p }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            min: self.min.coords.inf(&other.min.coords).into(),
            max: self.max.coords.sup(&other.max.coords).into(),
        }
    }

    pub fn dilated(&self, margin: T) -> Self {
        let m = Vector3::repeat(margin);
        Self {
            min: self.min - m,
            max: self.max + m,
        }
    }

    pub fn contains(&self, p: &Point3<T>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn intersects(&self, other: &Self) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    pub fn extents(&self) -> Vector3<T> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<T> {
        (self.min.coords + self.extents() * real::<T>(0.5)).into()
    }
}

/// Volume, centroid and body-frame inertia of the region f ≥ surface level,
/// with the inertia already scaled by the mass density.
#[derive(Debug, Clone, Copy)]
pub struct MassProperties<T: Real> {
    pub volume: T,
    pub centroid: Point3<T>,
    pub inertia_tensor: Matrix3<T>,
}

/// Whether mass-property integration accounts for the sphero dilation.
///
/// `ScaledWeights` grows every weight so the ball a lone control point makes
/// gains `sphero_radius` in radius; a crude stand-in for true dilation, off by
/// default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpheroDilation {
    #[default]
    Off,
    ScaledWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metaball<T: Real> {
    control_points: Vec<ControlPoint<T>>,
    sphero_radius: T,
    surface_level: T,
    /// Characteristic length used by the singular-evaluation guard.
    scale: T,
    guard_sq: T,
}

impl<T: Real> Metaball<T> {
    pub fn new(
        control_points: Vec<ControlPoint<T>>,
        sphero_radius: T,
    ) -> Result<Self, GeometryError> {
        Self::with_surface_level(control_points, sphero_radius, T::one())
    }

    pub fn with_surface_level(
        control_points: Vec<ControlPoint<T>>,
        sphero_radius: T,
        surface_level: T,
    ) -> Result<Self, GeometryError> {
        if control_points.is_empty() {
            return Err(GeometryError::NoControlPoints);
        }
        for (index, cp) in control_points.iter().enumerate() {
            let finite = cp.position.coords.iter().all(|c| c.is_finite()) && cp.weight.is_finite();
            if !finite {
                return Err(GeometryError::NonFinite { index });
            }
        }
        if !sphero_radius.is_finite() || sphero_radius < T::zero() {
            return Err(GeometryError::InvalidSpheroRadius {
                value: sphero_radius.to_f64().unwrap_or(f64::NAN),
            });
        }
        let scale = Self::characteristic_scale(&control_points, sphero_radius);
        let guard = real::<T>(1e-12) * scale;
        Ok(Self {
            control_points,
            sphero_radius,
            surface_level,
            scale,
            guard_sq: guard * guard,
        })
    }

    fn characteristic_scale(points: &[ControlPoint<T>], sphero_radius: T) -> T {
        let n = real::<T>(points.len() as f64);
        let inv_n = T::one() / n;
        let mut center = Vector3::zeros();
        for cp in points {
            center += cp.position.coords * inv_n;
        }
        let mut scale = sphero_radius;
        for cp in points {
            let reach = (cp.position.coords - center).norm() + (cp.weight.max(T::zero()) * n).sqrt();
            scale = scale.max(reach);
        }
        scale
    }

    pub fn control_points(&self) -> &[ControlPoint<T>] {
        &self.control_points
    }

    pub fn sphero_radius(&self) -> T {
        self.sphero_radius
    }

    pub fn surface_level(&self) -> T {
        self.surface_level
    }

    /// Characteristic length of the shape (bounding radius about the centroid).
    pub fn scale(&self) -> T {
        self.scale
    }

    /// Weight-averaged control-point position; plain average when all weights
    /// vanish. A cheap interior point for seeding iterative searches.
    pub fn weighted_centroid(&self) -> Point3<T> {
        let mut total = T::zero();
        let mut acc = Vector3::zeros();
        for cp in &self.control_points {
            let w = cp.weight.max(T::zero());
            total += w;
            acc += cp.position.coords * w;
        }
        if total > T::zero() {
            (acc / total).into()
        } else {
            let inv_n = T::one() / real::<T>(self.control_points.len() as f64);
            let mut mean = Vector3::zeros();
            for cp in &self.control_points {
                mean += cp.position.coords * inv_n;
            }
            mean.into()
        }
    }

    /// f(x) = Σ_i k_i / ‖x − x̂_i‖².
    pub fn evaluate(&self, x: &Point3<T>) -> Result<T, GeometryError> {
        let mut f = T::zero();
        for (index, cp) in self.control_points.iter().enumerate() {
            let r2 = (x - cp.position).norm_squared();
            if r2 <= self.guard_sq {
                return Err(GeometryError::SingularEvaluation { index });
            }
            f += cp.weight / r2;
        }
        Ok(f)
    }

    /// ∇f(x) = Σ_i −2 k_i (x − x̂_i)/‖x − x̂_i‖⁴.
    pub fn gradient(&self, x: &Point3<T>) -> Result<Vector3<T>, GeometryError> {
        let two = real::<T>(2.0);
        let mut g = Vector3::zeros();
        for (index, cp) in self.control_points.iter().enumerate() {
            let d = x - cp.position;
            let r2 = d.norm_squared();
            if r2 <= self.guard_sq {
                return Err(GeometryError::SingularEvaluation { index });
            }
            g -= d * (two * cp.weight / (r2 * r2));
        }
        Ok(g)
    }

    /// Second derivative matrix of f at x.
    pub fn hessian(&self, x: &Point3<T>) -> Result<Matrix3<T>, GeometryError> {
        let two = real::<T>(2.0);
        let eight = real::<T>(8.0);
        let mut h = Matrix3::zeros();
        for (index, cp) in self.control_points.iter().enumerate() {
            let d = x - cp.position;
            let r2 = d.norm_squared();
            if r2 <= self.guard_sq {
                return Err(GeometryError::SingularEvaluation { index });
            }
            let r4 = r2 * r2;
            let r6 = r4 * r2;
            h += (d * d.transpose()) * (eight * cp.weight / r6);
            h -= Matrix3::identity() * (two * cp.weight / r4);
        }
        Ok(h)
    }

    /// Smallest t in (0, max_t] with f(origin + t·direction) = level; the ray
    /// is scanned at 64 samples for the first upward sign change and the
    /// bracket then bisected. Returns `None` when the scan finds no crossing.
    pub fn ray_surface_parameter(
        &self,
        origin: &Point3<T>,
        direction: &Vector3<T>,
        level: T,
        max_t: T,
    ) -> Result<Option<T>, GeometryError> {
        const SCAN_SAMPLES: usize = 64;
        let norm = direction.norm();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(GeometryError::InvalidDirection);
        }
        let dir = direction / norm;
        let step = max_t / real::<T>(SCAN_SAMPLES as f64);

        let sample = |t: T| -> Result<T, GeometryError> { self.evaluate(&(origin + dir * t)) };
        let mut t_lo = T::zero();
        let mut f_lo = sample(t_lo)?;
        let mut bracket = None;
        for j in 1..=SCAN_SAMPLES {
            let t_hi = step * real::<T>(j as f64);
            let f_hi = sample(t_hi)?;
            if f_lo < level && f_hi >= level {
                bracket = Some((t_lo, t_hi));
                break;
            }
            t_lo = t_hi;
            f_lo = f_hi;
        }
        let (mut lo, mut hi) = match bracket {
            Some(b) => b,
            None => return Ok(None),
        };

        let tol_t = real::<T>(1e-12);
        let tol_f = real::<T>(1e-12) * T::one().max(level.abs());
        for _ in 0..200 {
            let mid = (lo + hi) * real::<T>(0.5);
            let f_mid = sample(mid)?;
            if f_mid >= level {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= tol_t && (f_mid - level).abs() <= tol_f {
                break;
            }
        }
        Ok(Some((lo + hi) * real::<T>(0.5)))
    }

    /// Per-control-point bound radii √(n·k_i) + sphero radius + margin,
    /// unioned. Contains the whole f ≥ 1 region dilated by the sphero radius.
    pub fn bounding_box(&self, margin: T) -> Aabb<T> {
        let n = real::<T>(self.control_points.len() as f64);
        let mut aabb: Option<Aabb<T>> = None;
        for cp in &self.control_points {
            let r = (cp.weight.max(T::zero()) * n).sqrt() + self.sphero_radius + margin;
            let b = Aabb::from_point(cp.position).dilated(r);
            aabb = Some(match aabb {
                Some(a) => a.union(&b),
                None => b,
            });
        }
        aabb.expect("metaball has control points")
    }

    /// Volume, centroid and density-scaled inertia of the f ≥ surface-level
    /// region, by midpoint integration on a regular `resolution`³ grid over
    /// the bounding box.
    pub fn mass_properties(
        &self,
        density: T,
        resolution: usize,
        dilation: SpheroDilation,
    ) -> Result<MassProperties<T>, GeometryError> {
        if resolution < 32 {
            return Err(GeometryError::ResolutionTooLow { resolution });
        }
        let body = match dilation {
            SpheroDilation::Off => self.clone(),
            SpheroDilation::ScaledWeights => self.dilation_approximation()?,
        };
        let bounds = self.bounding_box(T::zero());
        let ext = bounds.extents();
        let res = real::<T>(resolution as f64);
        let h = Vector3::new(ext.x / res, ext.y / res, ext.z / res);
        let cell_volume = h.x * h.y * h.z;
        let half = real::<T>(0.5);

        let mut count: u64 = 0;
        let mut sum = Vector3::<T>::zeros();
        let mut sum_sq = Matrix3::<T>::zeros();
        for iz in 0..resolution {
            let z = bounds.min.z + h.z * (real::<T>(iz as f64) + half);
            for iy in 0..resolution {
                let y = bounds.min.y + h.y * (real::<T>(iy as f64) + half);
                for ix in 0..resolution {
                    let x = bounds.min.x + h.x * (real::<T>(ix as f64) + half);
                    let p = Point3::new(x, y, z);
                    // A grid point that hits the singular guard is interior.
                    let inside = match body.evaluate(&p) {
                        Ok(f) => f >= body.surface_level,
                        Err(GeometryError::SingularEvaluation { .. }) => true,
                        Err(e) => return Err(e),
                    };
                    if inside {
                        count += 1;
                        sum += p.coords;
                        sum_sq += p.coords * p.coords.transpose();
                    }
                }
            }
        }
        if count == 0 {
            return Err(GeometryError::EmptyLevelSet {
                level: self.surface_level.to_f64().unwrap_or(1.0),
                resolution,
            });
        }

        let n = real::<T>(count as f64);
        let centroid = sum / n;
        let volume = cell_volume * n;
        // Second moment about the centroid via the parallel-axis shift.
        let second = sum_sq - (centroid * centroid.transpose()) * n;
        let trace = second[(0, 0)] + second[(1, 1)] + second[(2, 2)];
        let inertia = (Matrix3::identity() * trace - second) * (density * cell_volume);
        Ok(MassProperties {
            volume,
            centroid: centroid.into(),
            inertia_tensor: inertia,
        })
    }

    fn dilation_approximation(&self) -> Result<Self, GeometryError> {
        let grown = self
            .control_points
            .iter()
            .map(|cp| {
                let w = if cp.weight > T::zero() {
                    let r = cp.weight.sqrt() + self.sphero_radius;
                    r * r
                } else {
                    cp.weight
                };
                ControlPoint::new(cp.position, w)
            })
            .collect();
        Self::with_surface_level(grown, self.sphero_radius, self.surface_level)
    }

    /// The same shape under a rigid transform (control points mapped, weights
    /// and radii untouched).
    pub fn transformed(&self, iso: &Isometry3<T>) -> Self {
        let moved = self
            .control_points
            .iter()
            .map(|cp| ControlPoint::new(iso.transform_point(&cp.position), cp.weight))
            .collect();
        Self::with_surface_level(moved, self.sphero_radius, self.surface_level)
            .expect("rigid transform preserves metaball validity")
    }
}

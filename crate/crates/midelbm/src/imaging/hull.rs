//! Centered point hulls and convex-membership queries.

use nalgebra::{Point3, Vector3};

use super::ImagingError;
use crate::geometry::Aabb;
use crate::{real, Real};

/// A point cloud translated so its centroid is at the origin. The offset that
/// undoes the translation is kept so fitted models can be mapped back into
/// the original coordinates.
#[derive(Debug, Clone)]
pub struct PointHull<T: Real> {
    points: Vec<Point3<T>>,
    centroid_offset: Vector3<T>,
    bounding_radius: T,
    bounds: Aabb<T>,
}

impl<T: Real> PointHull<T> {
    /// Center `points` and validate that they span a volume.
    pub fn from_raw(points: Vec<Point3<T>>) -> Result<Self, ImagingError> {
        if points.len() < 4 {
            return Err(ImagingError::TooFewPoints {
                count: points.len(),
            });
        }
        let inv_m = T::one() / real::<T>(points.len() as f64);
        let mut centroid = Vector3::zeros();
        for p in &points {
            centroid += p.coords * inv_m;
        }
        let centered: Vec<Point3<T>> = points.iter().map(|p| p - centroid).collect();

        // Coplanar (or lower-dimensional) clouds cannot bound a volume; the
        // smallest covariance eigenvalue measures the thinnest extent.
        let mut cov = nalgebra::Matrix3::zeros();
        for p in &centered {
            cov += p.coords * p.coords.transpose() * inv_m;
        }
        let eigen = cov.symmetric_eigenvalues();
        let max_eig = eigen.iter().fold(T::zero(), |a, &b| a.max(b));
        let min_eig = eigen.iter().fold(max_eig, |a, &b| a.min(b));
        if !(max_eig > T::zero()) || min_eig <= real::<T>(1e-12) * max_eig {
            return Err(ImagingError::DegenerateCloud);
        }

        Ok(Self::from_parts_unchecked(centered, centroid))
    }

    /// Assemble a hull directly from already-centered points, skipping the
    /// size and volume checks. The caller vouches for the invariants.
    pub fn from_parts_unchecked(points: Vec<Point3<T>>, centroid_offset: Vector3<T>) -> Self {
        let mut bounding_radius = T::zero();
        let mut bounds = Aabb::from_point(points.first().copied().unwrap_or(Point3::origin()));
        for p in &points {
            bounding_radius = bounding_radius.max(p.coords.norm());
            bounds = bounds.union(&Aabb::from_point(*p));
        }
        Self {
            points,
            centroid_offset,
            bounding_radius,
            bounds,
        }
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    /// Translation that maps the centered frame back to the original cloud.
    pub fn centroid_offset(&self) -> Vector3<T> {
        self.centroid_offset
    }

    /// Radius of the smallest origin-centered ball containing the points.
    pub fn bounding_radius(&self) -> T {
        self.bounding_radius
    }

    pub fn bounds(&self) -> &Aabb<T> {
        &self.bounds
    }
}

/// Is `p` a convex combination of the hull points? Decided by a phase-1
/// simplex on Σ a_i H_i = p, Σ a_i = 1, a_i ≥ 0, with coordinates scaled by
/// the hull radius and a 1e-9 feasibility tolerance.
pub fn point_in_hull<T: Real>(hull: &PointHull<T>, p: &Point3<T>) -> bool {
    let scale = hull.bounding_radius().to_f64().unwrap_or(1.0).max(1e-300);
    let m = hull.points().len();
    let query = [
        p.x.to_f64().unwrap_or(f64::NAN) / scale,
        p.y.to_f64().unwrap_or(f64::NAN) / scale,
        p.z.to_f64().unwrap_or(f64::NAN) / scale,
    ];
    if query.iter().any(|c| !c.is_finite()) {
        return false;
    }
    // Quick reject: outside the bounding box of the points (half a tolerance
    // of slack), the LP cannot be feasible.
    let bounds = hull.bounds();
    for axis in 0..3 {
        let lo = bounds.min[axis].to_f64().unwrap_or(f64::NEG_INFINITY) / scale;
        let hi = bounds.max[axis].to_f64().unwrap_or(f64::INFINITY) / scale;
        if query[axis] < lo - 1e-9 || query[axis] > hi + 1e-9 {
            return false;
        }
    }

    const ROWS: usize = 4;
    let cols = m + ROWS; // hull coefficients then one artificial per row
    let width = cols + 1; // plus the right-hand side
    let mut tableau = vec![0.0f64; ROWS * width];
    let mut rhs_sign = [1.0f64; ROWS];
    let rhs_raw = [query[0], query[1], query[2], 1.0];
    for r in 0..ROWS {
        if rhs_raw[r] < 0.0 {
            rhs_sign[r] = -1.0;
        }
    }
    for (j, h) in hull.points().iter().enumerate() {
        let col = [
            h.x.to_f64().unwrap_or(0.0) / scale,
            h.y.to_f64().unwrap_or(0.0) / scale,
            h.z.to_f64().unwrap_or(0.0) / scale,
            1.0,
        ];
        for r in 0..ROWS {
            tableau[r * width + j] = rhs_sign[r] * col[r];
        }
    }
    for r in 0..ROWS {
        tableau[r * width + m + r] = 1.0;
        tableau[r * width + cols] = rhs_sign[r] * rhs_raw[r];
    }

    // Phase-1 objective: minimize the sum of artificials. With the artificial
    // basis, the reduced-cost row is the negated sum of the constraint rows
    // over the structural columns.
    let mut cost = vec![0.0f64; width];
    for j in 0..m {
        for r in 0..ROWS {
            cost[j] -= tableau[r * width + j];
        }
    }
    let mut objective: f64 = (0..ROWS).map(|r| tableau[r * width + cols]).sum();
    let mut basis = [m, m + 1, m + 2, m + 3];

    const PIVOT_EPS: f64 = 1e-11;
    const TOL: f64 = 1e-9;
    let max_pivots = 50 * (cols + 1);
    for _ in 0..max_pivots {
        // Bland's rule: the lowest-index improving column enters.
        let entering = (0..cols).find(|&j| cost[j] < -PIVOT_EPS);
        let j = match entering {
            Some(j) => j,
            None => break,
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..ROWS {
            let a = tableau[r * width + j];
            if a > PIVOT_EPS {
                let ratio = tableau[r * width + cols] / a;
                let better = match leave {
                    None => true,
                    Some((lr, lratio)) => {
                        ratio < lratio - PIVOT_EPS
                            || (ratio < lratio + PIVOT_EPS && basis[r] < basis[lr])
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let (r, _) = match leave {
            Some(l) => l,
            // Unbounded phase-1 cannot happen (objective ≥ 0); bail out.
            None => break,
        };

        let pivot = tableau[r * width + j];
        for c in 0..width {
            tableau[r * width + c] /= pivot;
        }
        for rr in 0..ROWS {
            if rr != r {
                let factor = tableau[rr * width + j];
                if factor != 0.0 {
                    for c in 0..width {
                        tableau[rr * width + c] -= factor * tableau[r * width + c];
                    }
                }
            }
        }
        let factor = cost[j];
        if factor != 0.0 {
            for c in 0..width {
                cost[c] -= factor * tableau[r * width + c];
            }
            // The entering variable takes the (normalized) pivot-row RHS as
            // its value, improving the objective by its reduced cost times it.
            objective += factor * tableau[r * width + cols];
        }
        basis[r] = j;
        if objective <= TOL {
            return true;
        }
    }
    objective <= TOL
}

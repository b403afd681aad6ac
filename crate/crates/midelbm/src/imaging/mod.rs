//! Fitting a metaball model to a surface point cloud.
//!
//! The pipeline is: [`preprocess`] filters the cloud to a region of interest
//! and moves its centroid to the origin, [`ga::run_ga`] captures the outer
//! contour with a genetic algorithm, and [`gs::run_gs`] refines the model by
//! gradient descent on a piecewise loss, with [`gs::anomaly_detect`] clearing
//! escaped or sign-flipped control points between the two descent phases.

mod ga;
mod gs;
mod hull;

pub use ga::{run_ga, run_ga_detailed, GaConfig, GaOutcome, Individual};
pub use gs::{anomaly_detect, gs_loss, run_gs, GsConfig};
pub use hull::{point_in_hull, PointHull};

use nalgebra::Point3;

use crate::geometry::{Aabb, GeometryError, Metaball};
use crate::{real, Real};

#[derive(Debug, thiserror::Error)]
pub enum ImagingError {
    #[error("point cloud has {count} usable points, need at least 4")]
    TooFewPoints { count: usize },
    #[error("point cloud is degenerate (coplanar or coincident points)")]
    DegenerateCloud,
    #[error("invalid configuration: {what}")]
    InvalidConfig { what: String },
    #[error("could not place a control point inside the hull after {tries} rejection samples")]
    InfeasibleInitialization { tries: usize },
    #[error("every control point was anomalous (outside the hull or non-positive weight)")]
    AllAnomalous,
    #[error("gradient search diverged: loss grew for {epochs} consecutive epochs, retry with a smaller learning rate")]
    Divergence { epochs: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Filter `raw_points` to `region` (when given) and translate the survivors
/// so their centroid is the origin. The hull records the removed translation
/// so models fitted in the centered frame can be mapped back.
pub fn preprocess<T: Real>(
    raw_points: &[Point3<T>],
    region: Option<&Aabb<T>>,
) -> Result<PointHull<T>, ImagingError> {
    let kept: Vec<Point3<T>> = raw_points
        .iter()
        .filter(|p| region.map_or(true, |r| r.contains(p)))
        .copied()
        .collect();
    PointHull::from_raw(kept)
}

/// Sum of squared surface residuals Σ (f(H_i) − 1)² of `mb` over the hull
/// points. A control point coincident with a hull point makes the fit
/// unusable and returns +∞.
pub fn fitness<T: Real>(mb: &Metaball<T>, hull: &PointHull<T>) -> T {
    let mut total = T::zero();
    for p in hull.points() {
        match mb.evaluate(p) {
            Ok(f) => {
                let r = f - T::one();
                total += r * r;
            }
            Err(_) => return real::<T>(f64::INFINITY),
        }
    }
    total
}

/// Full fit: preprocess, contour capture, refinement. The returned model is
/// expressed in the original (uncentered) coordinates of the cloud.
pub struct FitResult<T: Real> {
    /// Fitted model in the original cloud frame.
    pub metaball: Metaball<T>,
    /// The same model in the centered fitting frame.
    pub metaball_centered: Metaball<T>,
    pub hull: PointHull<T>,
    pub ga_loss: T,
    pub final_loss: T,
    /// Per-hull-point |f − 1| of the final model.
    pub residuals: Vec<T>,
}

pub fn fit_point_cloud<T: Real>(
    raw_points: &[Point3<T>],
    region: Option<&Aabb<T>>,
    ga_cfg: &GaConfig,
    gs_cfg: &GsConfig,
) -> Result<FitResult<T>, ImagingError> {
    let hull = preprocess(raw_points, region)?;
    let coarse = run_ga(&hull, ga_cfg)?;
    let ga_loss = gs_loss(&coarse, &hull);
    let refined = run_gs(&coarse, &hull, gs_cfg)?;
    let final_loss = gs_loss(&refined, &hull);
    let residuals = hull
        .points()
        .iter()
        .map(|p| match refined.evaluate(p) {
            Ok(f) => (f - T::one()).abs(),
            Err(_) => real::<T>(f64::INFINITY),
        })
        .collect();
    let back = nalgebra::Isometry3::translation(
        hull.centroid_offset().x,
        hull.centroid_offset().y,
        hull.centroid_offset().z,
    );
    Ok(FitResult {
        metaball: refined.transformed(&back),
        metaball_centered: refined,
        hull,
        ga_loss,
        final_loss,
        residuals,
    })
}


#[cfg(test)]
mod tests {
    use super::test_clouds::sphere_cloud;
    use super::*;
    use crate::geometry::ControlPoint;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;

    #[test]
    fn preprocess_centers_an_offset_cloud() {
        // Antipodal pairs make the cloud centroid exactly the sphere center.
        let center = Point3::new(100.0, 100.0, 100.0);
        let mut cloud = Vec::new();
        for p in sphere_cloud(Point3::origin(), 1.0, 32, 1) {
            cloud.push(center + p.coords);
            cloud.push(center - p.coords);
        }
        let hull = preprocess(&cloud, None).unwrap();
        let mean: Vector3<f64> = hull.points().iter().map(|p| p.coords).sum::<Vector3<f64>>()
            / cloud.len() as f64;
        assert!(mean.norm() < 1e-9 * hull.bounding_radius());
        assert!((hull.centroid_offset() - Vector3::new(100.0, 100.0, 100.0)).norm() < 1e-9);
    }

    #[test]
    fn preprocess_region_filter_keeps_only_in_region_points() {
        let mut cloud = sphere_cloud(Point3::origin(), 1.0, 50, 2);
        cloud.extend(sphere_cloud(Point3::new(10.0, 0.0, 0.0), 1.0, 50, 3));
        let region = Aabb::new(Point3::new(-2.0, -2.0, -2.0), Point3::new(2.0, 2.0, 2.0));
        let hull = preprocess(&cloud, Some(&region)).unwrap();
        assert_eq!(hull.points().len(), 50);
        // All survivors came from the origin cluster.
        for p in hull.points() {
            assert!((p.coords + hull.centroid_offset()).norm() < 2.0);
        }
    }

    #[test]
    fn preprocess_of_centered_cloud_is_identity() {
        let cloud = vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, -1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(0.0, 0.0, -1.0),
        ];
        let hull = preprocess(&cloud, None).unwrap();
        assert_eq!(hull.points(), cloud.as_slice());
        assert_eq!(hull.centroid_offset(), Vector3::zeros());
    }

    #[test]
    fn preprocess_rejects_small_and_coplanar_clouds() {
        let three = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        assert!(matches!(
            preprocess::<f64>(&three, None),
            Err(ImagingError::TooFewPoints { count: 3 })
        ));
        let flat = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.3, 0.7, 0.0),
        ];
        assert!(matches!(
            preprocess::<f64>(&flat, None),
            Err(ImagingError::DegenerateCloud)
        ));
    }

    #[test]
    fn fitness_of_exact_sphere_fit_is_zero() {
        let cloud = test_clouds::symmetric_sphere_cloud(1.5, 50, 4);
        let hull = preprocess(&cloud, None).unwrap();
        let mb = Metaball::new(vec![ControlPoint::new(Point3::origin(), 2.25)], 0.0).unwrap();
        assert!(fitness(&mb, &hull) < 1e-18);
    }

    #[test]
    fn fitness_hand_computed_two_point_value() {
        let hull = PointHull::from_parts_unchecked(
            vec![Point3::new(2.0, 0.0, 0.0), Point3::new(0.5, 0.0, 0.0)],
            Vector3::zeros(),
        );
        let mb = Metaball::new(vec![ControlPoint::new(Point3::origin(), 1.0)], 0.0).unwrap();
        assert_abs_diff_eq!(fitness(&mb, &hull), 9.5625, epsilon = 1e-12);
    }

    #[test]
    fn fitness_with_zero_weights_counts_every_point_once() {
        let cloud = sphere_cloud(Point3::origin(), 1.0, 37, 5);
        let hull = preprocess(&cloud, None).unwrap();
        let mb = Metaball::new(vec![ControlPoint::new(Point3::origin(), 0.0)], 0.0).unwrap();
        assert_abs_diff_eq!(fitness(&mb, &hull), 37.0, epsilon = 1e-12);
    }

    #[test]
    fn fitness_is_infinite_when_a_control_point_touches_a_hull_point() {
        let p = Point3::new(1.0f64, 0.0, 0.0);
        let hull = PointHull::from_parts_unchecked(
            vec![p, Point3::new(-1.0, 0.0, 0.0)],
            Vector3::zeros(),
        );
        let mb = Metaball::new(vec![ControlPoint::new(p, 1.0)], 0.0).unwrap();
        assert!(fitness(&mb, &hull).is_infinite());
    }

    #[test]
    fn full_pipeline_fits_a_sphere_cloud() {
        let center = Point3::new(3.0, -2.0, 1.0);
        let cloud = sphere_cloud(center, 1.0, 300, 6);
        let ga_cfg = GaConfig {
            generations: 60,
            population: 120,
            genes: 8,
            mutation_coeff: 0.6,
            crossover_coeff: 0.5,
            rng_seed: 7,
        };
        let gs_cfg = GsConfig {
            epochs: 2000,
            learning_rate: 2e-4,
            anomaly_tolerance: 0.0,
        };
        let fit = fit_point_cloud(&cloud, None, &ga_cfg, &gs_cfg).unwrap();
        let m = fit.residuals.len() as f64;
        let mean_residual: f64 = fit.residuals.iter().sum::<f64>() / m;
        assert!(mean_residual < 1e-2, "mean |f-1| = {mean_residual}");
        // The world-frame model reproduces the original cloud.
        for p in &cloud {
            let f = fit.metaball.evaluate(p).unwrap();
            assert!((f - 1.0).abs() < 0.2);
        }
    }
}

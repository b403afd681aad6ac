//! Morphology of a metaball particle: sphericity, equivalent diameters,
//! principal extents and the Corey shape factor.
//!
//! Everything is measured on the region the fluid solver treats as solid, so
//! dilated shapes are characterized consistently with how they settle. The
//! sphericity compares the surface mesh's own area against the sphere
//! matching the mesh's enclosed volume; the isoperimetric inequality then
//! caps the ratio at one for every closed surface, sphere included.

use nalgebra::{Unit, Vector3};

use super::EngineError;
use crate::geometry::{GeometryError, Metaball, SpheroDilation};
use crate::lbm::hydrodynamic_region;
use crate::mesh::surface_mesh;
use crate::{real, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeDescriptors<T: Real> {
    /// Surface area of the volume-equivalent sphere over the particle's own
    /// surface area. At most one, with equality only for a sphere.
    pub sphericity: T,
    /// Diameter of the volume-equivalent sphere.
    pub nominal_diameter: T,
    /// Diameter of the disc matching the largest projected area.
    pub surface_equivalent_diameter: T,
    /// Shortest principal extent over the geometric mean of the other two.
    pub corey_shape_factor: T,
    /// Extents along the principal inertia axes, longest first.
    pub principal_extents: [T; 3],
    pub surface_area: T,
    pub volume: T,
}

/// Measure `shape` on a `resolution`-cell grid: surface area from the
/// triangulated level set, volume and principal axes from grid integration,
/// projected area as the largest shadow along the three principal axes.
pub fn shape_descriptors<T: Real>(
    shape: &Metaball<T>,
    resolution: usize,
) -> Result<ShapeDescriptors<T>, EngineError> {
    let body = hydrodynamic_region(shape).map_err(|e| EngineError::DegenerateShape {
        message: e.to_string(),
    })?;
    let mesh = surface_mesh(&body, T::one(), resolution)?;
    let surface_area = mesh.area();
    let mesh_volume = mesh.volume();
    let props = body.mass_properties(T::one(), resolution, SpheroDilation::Off)?;
    let volume = props.volume;

    let pi = T::pi();
    let six = real::<T>(6.0);
    let third = T::one() / real::<T>(3.0);
    let nominal_diameter = (six * volume / pi).powf(third);
    let equivalent_sphere_area = pi.powf(third) * (six * mesh_volume).powf(third * real::<T>(2.0));
    let sphericity = equivalent_sphere_area / surface_area;

    let eigen = props.inertia_tensor.symmetric_eigen();
    let axes: [Unit<Vector3<T>>; 3] = std::array::from_fn(|j| {
        Unit::new_normalize(eigen.eigenvectors.column(j).into_owned())
    });

    let centroid = props.centroid;
    let mut extents = [T::zero(); 3];
    for (j, axis) in axes.iter().enumerate() {
        let mut lo = (mesh.vertices[0] - centroid).dot(axis);
        let mut hi = lo;
        for v in &mesh.vertices[1..] {
            let s = (v - centroid).dot(axis);
            lo = lo.min(s);
            hi = hi.max(s);
        }
        extents[j] = hi - lo;
    }
    extents.sort_by(|a, b| b.partial_cmp(a).expect("mesh extents are finite"));

    let mut projected = T::zero();
    for axis in &axes {
        projected = projected.max(projected_area(&body, axis, resolution)?);
    }
    let surface_equivalent_diameter = (real::<T>(4.0) * projected / pi).sqrt();
    let corey_shape_factor = extents[2] / (extents[0] * extents[1]).sqrt();

    Ok(ShapeDescriptors {
        sphericity,
        nominal_diameter,
        surface_equivalent_diameter,
        corey_shape_factor,
        principal_extents: extents,
        surface_area,
        volume,
    })
}

/// Area of the shadow the level-one region casts along `axis`, by rasterizing
/// the projection plane and testing each raster line against the field.
fn projected_area<T: Real>(
    body: &Metaball<T>,
    axis: &Unit<Vector3<T>>,
    resolution: usize,
) -> Result<T, EngineError> {
    let u = axis.into_inner();
    let helper = if u.x.abs() < real::<T>(0.9) {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let a = Unit::new_normalize(u.cross(&helper)).into_inner();
    let b = u.cross(&a);

    let bounds = body.bounding_box(T::zero());
    let mut corners = [(T::zero(), T::zero()); 8];
    for (bits, slot) in corners.iter_mut().enumerate() {
        let pick = |axis_index: usize, bit: usize| {
            if bits >> bit & 1 == 1 {
                bounds.max[axis_index]
            } else {
                bounds.min[axis_index]
            }
        };
        let corner = Vector3::new(pick(0, 0), pick(1, 1), pick(2, 2));
        *slot = (corner.dot(&a), corner.dot(&b));
    }
    let mut a_lo = corners[0].0;
    let mut a_hi = a_lo;
    let mut b_lo = corners[0].1;
    let mut b_hi = b_lo;
    for &(ca, cb) in &corners[1..] {
        a_lo = a_lo.min(ca);
        a_hi = a_hi.max(ca);
        b_lo = b_lo.min(cb);
        b_hi = b_hi.max(cb);
    }

    let n = resolution;
    let step_a = (a_hi - a_lo) / real::<T>(n as f64);
    let step_b = (b_hi - b_lo) / real::<T>(n as f64);
    let half = real::<T>(0.5);
    let mut hits: u64 = 0;
    for ib in 0..n {
        let beta = b_lo + step_b * (real::<T>(ib as f64) + half);
        for ia in 0..n {
            let alpha = a_lo + step_a * (real::<T>(ia as f64) + half);
            let base = a * alpha + b * beta;
            if line_reaches_level(body, &base, &u)? {
                hits += 1;
            }
        }
    }
    Ok(step_a * step_b * real::<T>(hits as f64))
}

/// Whether the field along the line `base + t·direction` reaches the level-one
/// threshold anywhere. Closed-form bounds decide all but a thin band of
/// lines: each kernel's contribution along the line peaks at k_i/d_i² for
/// perpendicular distance d_i, so the sum is confined between the largest
/// single peak and the sum of all peaks. The remaining band is sampled.
fn line_reaches_level<T: Real>(
    body: &Metaball<T>,
    base: &Vector3<T>,
    direction: &Vector3<T>,
) -> Result<bool, EngineError> {
    let mut lower = T::zero();
    let mut upper = T::zero();
    let mut t_lo = T::zero();
    let mut t_hi = T::zero();
    let mut positive_weight = T::zero();
    let mut mixed_signs = false;
    for (i, cp) in body.control_points().iter().enumerate() {
        let rel = cp.position.coords - base;
        let t = rel.dot(direction);
        let d2 = (rel.norm_squared() - t * t).max(T::zero());
        if i == 0 {
            t_lo = t;
            t_hi = t;
        } else {
            t_lo = t_lo.min(t);
            t_hi = t_hi.max(t);
        }
        if cp.weight < T::zero() {
            mixed_signs = true;
        } else {
            positive_weight += cp.weight;
        }
        if d2 == T::zero() {
            if cp.weight > T::zero() {
                return Ok(true);
            }
            continue;
        }
        let peak = cp.weight / d2;
        lower = lower.max(peak);
        upper += peak.max(T::zero());
    }
    if !mixed_signs {
        if lower >= T::one() {
            return Ok(true);
        }
        if upper < T::one() {
            return Ok(false);
        }
    }
    // Beyond one reach past the outermost kernel center the whole positive
    // mass is too far away to lift the field to one.
    let reach = positive_weight.sqrt();
    let start = t_lo - reach;
    let span = t_hi - t_lo + reach + reach;
    let samples = 512;
    let step = span / real::<T>(samples as f64);
    for s in 0..=samples {
        let t = start + step * real::<T>(s as f64);
        let p = nalgebra::Point3::from(base + direction * t);
        match body.evaluate(&p) {
            Ok(f) => {
                if f >= T::one() {
                    return Ok(true);
                }
            }
            Err(GeometryError::SingularEvaluation { .. }) => return Ok(true),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ControlPoint;
    use nalgebra::Point3;

    fn ball(radius: f64, sphero: f64) -> Metaball<f64> {
        let k = (radius - sphero).powi(2);
        Metaball::new(
            vec![ControlPoint::new(Point3::new(0.4, -0.7, 0.2), k)],
            sphero,
        )
        .unwrap()
    }

    fn pair(separation: f64, k: f64) -> Metaball<f64> {
        Metaball::new(
            vec![
                ControlPoint::new(Point3::new(-separation / 2.0, 0.0, 0.0), k),
                ControlPoint::new(Point3::new(separation / 2.0, 0.0, 0.0), k),
            ],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn sphere_descriptors_hit_their_analytic_values() {
        for (shape, radius) in [(ball(1.5, 0.0), 1.5), (ball(1.5, 0.4), 1.5)] {
            let d = shape_descriptors(&shape, 128).unwrap();
            let diameter = 2.0 * radius;
            assert!(d.sphericity <= 1.0, "sphericity {}", d.sphericity);
            assert!((d.sphericity - 1.0).abs() < 0.02);
            assert!((d.nominal_diameter - diameter).abs() / diameter < 0.01);
            assert!(
                (d.nominal_diameter / d.surface_equivalent_diameter - 1.0).abs() < 0.02,
                "dn/ds = {}",
                d.nominal_diameter / d.surface_equivalent_diameter
            );
            assert!(d.corey_shape_factor <= 1.0);
            assert!((d.corey_shape_factor - 1.0).abs() < 0.02);
            for extent in d.principal_extents {
                assert!((extent - diameter).abs() / diameter < 0.02);
            }
        }
    }

    #[test]
    fn stretching_a_two_ball_shape_lowers_the_corey_factor() {
        let d = shape_descriptors(&pair(1.0, 1.0), 96).unwrap();
        assert!(
            d.corey_shape_factor < 0.999,
            "corey factor {}",
            d.corey_shape_factor
        );
        assert!(d.sphericity < 1.0);
        assert!(d.principal_extents[0] > d.principal_extents[2]);
    }

    #[test]
    fn doubling_the_resolution_barely_moves_the_sphericity() {
        let shape = pair(0.8, 0.9);
        let coarse = shape_descriptors(&shape, 64).unwrap();
        let fine = shape_descriptors(&shape, 128).unwrap();
        let change = (fine.sphericity - coarse.sphericity).abs() / coarse.sphericity;
        assert!(change < 0.01, "sphericity moved by {change}");
    }

    #[test]
    fn descriptors_are_a_pure_function_of_shape_and_resolution() {
        let shape = pair(0.6, 1.1);
        let first = shape_descriptors(&shape, 64).unwrap();
        let second = shape_descriptors(&shape, 64).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn a_shape_with_no_level_set_is_rejected() {
        let empty = Metaball::new(
            vec![ControlPoint::new(Point3::new(0.1, 0.2, 0.3), 0.0)],
            0.0,
        )
        .unwrap();
        assert!(matches!(
            shape_descriptors(&empty, 64),
            Err(EngineError::Geometry(GeometryError::EmptyLevelSet { .. }))
        ));
    }
}

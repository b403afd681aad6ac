//! Triangulation of metaball level sets on a regular grid.
//!
//! Each grid cube is split into six tetrahedra that share the main diagonal,
//! so neighbouring cubes agree on the face diagonals and the extracted mesh
//! is watertight. Crossing vertices are interpolated once per grid edge and
//! shared through an edge map, which keeps them bitwise identical across all
//! tetrahedra that touch the edge.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};

use crate::geometry::{GeometryError, Metaball};
use crate::{real, Real};

/// Indexed triangle mesh with outward-facing winding.
#[derive(Debug, Clone)]
pub struct TriMesh<T: Real> {
    pub vertices: Vec<Point3<T>>,
    pub triangles: Vec<[usize; 3]>,
}

impl<T: Real> TriMesh<T> {
    pub fn area(&self) -> T {
        let half = real::<T>(0.5);
        let mut total = T::zero();
        for tri in &self.triangles {
            let a = self.vertices[tri[0]];
            let b = self.vertices[tri[1]];
            let c = self.vertices[tri[2]];
            total += (b - a).cross(&(c - a)).norm() * half;
        }
        total
    }

    /// Enclosed volume by the divergence theorem; meaningful only for a
    /// closed, consistently wound mesh.
    pub fn volume(&self) -> T {
        let sixth = T::one() / real::<T>(6.0);
        let mut total = T::zero();
        for tri in &self.triangles {
            let a = self.vertices[tri[0]].coords;
            let b = self.vertices[tri[1]].coords;
            let c = self.vertices[tri[2]].coords;
            total += a.dot(&b.cross(&c)) * sixth;
        }
        total.abs()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }
}

/// The six tetrahedra of the diagonal split, as cube-corner indices. Corner
/// bit layout: bit 0 = x, bit 1 = y, bit 2 = z. Every tetrahedron runs from
/// corner 0 to corner 7 along one axis permutation, which makes the face
/// diagonals consistent between neighbouring cubes.
const CUBE_TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 3, 2, 7],
    [0, 2, 6, 7],
    [0, 6, 4, 7],
    [0, 4, 5, 7],
    [0, 5, 1, 7],
];

/// Triangulate the f = `level` isosurface of `metaball` on a `resolution`³
/// grid spanning the bounding box (plus one cell of padding so the surface
/// never touches the grid boundary).
pub fn surface_mesh<T: Real>(
    metaball: &Metaball<T>,
    level: T,
    resolution: usize,
) -> Result<TriMesh<T>, GeometryError> {
    if resolution < 32 {
        return Err(GeometryError::ResolutionTooLow { resolution });
    }
    let res = resolution;
    let bounds = metaball.bounding_box(T::zero());
    let ext = bounds.extents();
    let h = Vector3::new(
        ext.x / real::<T>(res as f64),
        ext.y / real::<T>(res as f64),
        ext.z / real::<T>(res as f64),
    );
    let origin = bounds.min - h;
    let nodes = res + 3; // grid nodes per axis, including one padding cell per side

    let node_point = |ix: usize, iy: usize, iz: usize| -> Point3<T> {
        Point3::new(
            origin.x + h.x * real::<T>(ix as f64),
            origin.y + h.y * real::<T>(iy as f64),
            origin.z + h.z * real::<T>(iz as f64),
        )
    };
    let node_index = |ix: usize, iy: usize, iz: usize| -> usize { (iz * nodes + iy) * nodes + ix };

    let mut values = vec![T::zero(); nodes * nodes * nodes];
    for iz in 0..nodes {
        for iy in 0..nodes {
            for ix in 0..nodes {
                let p = node_point(ix, iy, iz);
                values[node_index(ix, iy, iz)] = match metaball.evaluate(&p) {
                    Ok(f) => f,
                    // A node on top of a control point is deep inside.
                    Err(GeometryError::SingularEvaluation { .. }) => real::<T>(f64::MAX / 4.0),
                    Err(e) => return Err(e),
                };
            }
        }
    }

    let mut vertices: Vec<Point3<T>> = Vec::new();
    let mut edge_vertices: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    let mut crossing = |a: usize, b: usize, vertices: &mut Vec<Point3<T>>| -> usize {
        let key = (a.min(b), a.max(b));
        *edge_vertices.entry(key).or_insert_with(|| {
            let (lo, hi) = key;
            let f_lo = values[lo];
            let f_hi = values[hi];
            let t = (level - f_lo) / (f_hi - f_lo);
            let p_lo = unflatten(lo, nodes);
            let p_hi = unflatten(hi, nodes);
            let a = node_point(p_lo.0, p_lo.1, p_lo.2);
            let b = node_point(p_hi.0, p_hi.1, p_hi.2);
            let v = a + (b - a) * t;
            vertices.push(v);
            vertices.len() - 1
        })
    };

    for iz in 0..nodes - 1 {
        for iy in 0..nodes - 1 {
            for ix in 0..nodes - 1 {
                let corner = |bit: usize| -> usize {
                    node_index(ix + (bit & 1), iy + ((bit >> 1) & 1), iz + ((bit >> 2) & 1))
                };
                let cube: [usize; 8] = std::array::from_fn(corner);
                for tet in &CUBE_TETS {
                    let g: [usize; 4] = std::array::from_fn(|i| cube[tet[i]]);
                    let inside: [bool; 4] = std::array::from_fn(|i| values[g[i]] >= level);
                    let n_in = inside.iter().filter(|&&b| b).count();
                    match n_in {
                        0 | 4 => {}
                        1 | 3 => {
                            let pick = n_in == 1;
                            let apex = (0..4).find(|&i| inside[i] == pick).unwrap();
                            let others: Vec<usize> = (0..4).filter(|&i| i != apex).collect();
                            let tri = [
                                crossing(g[apex], g[others[0]], &mut vertices),
                                crossing(g[apex], g[others[1]], &mut vertices),
                                crossing(g[apex], g[others[2]], &mut vertices),
                            ];
                            push_triangle(&mut triangles, &vertices, metaball, tri);
                        }
                        2 => {
                            let ins: Vec<usize> = (0..4).filter(|&i| inside[i]).collect();
                            let outs: Vec<usize> = (0..4).filter(|&i| !inside[i]).collect();
                            let v00 = crossing(g[ins[0]], g[outs[0]], &mut vertices);
                            let v01 = crossing(g[ins[0]], g[outs[1]], &mut vertices);
                            let v10 = crossing(g[ins[1]], g[outs[0]], &mut vertices);
                            let v11 = crossing(g[ins[1]], g[outs[1]], &mut vertices);
                            push_triangle(&mut triangles, &vertices, metaball, [v00, v01, v11]);
                            push_triangle(&mut triangles, &vertices, metaball, [v00, v11, v10]);
                        }
                        _ => unreachable!(),
                    }
                }
            }
        }
    }

    if triangles.is_empty() {
        return Err(GeometryError::EmptyLevelSet {
            level: level.to_f64().unwrap_or(1.0),
            resolution,
        });
    }
    Ok(TriMesh {
        vertices,
        triangles,
    })
}

fn unflatten(index: usize, nodes: usize) -> (usize, usize, usize) {
    let ix = index % nodes;
    let iy = (index / nodes) % nodes;
    let iz = index / (nodes * nodes);
    (ix, iy, iz)
}

/// Append the triangle wound so its normal points out of the body (against
/// the field gradient), dropping degenerate slivers.
fn push_triangle<T: Real>(
    triangles: &mut Vec<[usize; 3]>,
    vertices: &[Point3<T>],
    metaball: &Metaball<T>,
    tri: [usize; 3],
) {
    let a = vertices[tri[0]];
    let b = vertices[tri[1]];
    let c = vertices[tri[2]];
    let normal = (b - a).cross(&(c - a));
    let span = (b - a).norm().max((c - a).norm());
    if !(normal.norm() > span * span * real::<T>(1e-12)) {
        return;
    }
    let centroid = Point3::from((a.coords + b.coords + c.coords) / real::<T>(3.0));
    let outward = match metaball.gradient(&centroid) {
        Ok(g) if g.norm() > T::zero() => -g,
        _ => centroid - metaball.weighted_centroid(),
    };
    if normal.dot(&outward) >= T::zero() {
        triangles.push(tri);
    } else {
        triangles.push([tri[0], tri[2], tri[1]]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ControlPoint;
    use std::collections::BTreeMap;

    fn sphere(k: f64) -> Metaball<f64> {
        Metaball::new(vec![ControlPoint::new(Point3::origin(), k)], 0.0).unwrap()
    }

    fn edge_use_counts(mesh: &TriMesh<f64>) -> BTreeMap<(usize, usize), usize> {
        let mut counts = BTreeMap::new();
        for tri in &mesh.triangles {
            for e in 0..3 {
                let a = tri[e];
                let b = tri[(e + 1) % 3];
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    #[test]
    fn sphere_area_and_volume_match_analytic() {
        let r: f64 = 1.5;
        let mesh = surface_mesh(&sphere(r * r), 1.0, 96).unwrap();
        let area = 4.0 * std::f64::consts::PI * r * r;
        let volume = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        assert!((mesh.area() - area).abs() / area < 0.01, "area {}", mesh.area());
        assert!(
            (mesh.volume() - volume).abs() / volume < 0.01,
            "volume {}",
            mesh.volume()
        );
    }

    #[test]
    fn sphere_vertices_sit_on_the_surface() {
        let mb = sphere(1.0);
        let mesh = surface_mesh(&mb, 1.0, 64).unwrap();
        for v in &mesh.vertices {
            // Linear interpolation error on a 64-cell grid.
            assert!((v.coords.norm() - 1.0).abs() < 5e-3);
        }
    }

    #[test]
    fn mesh_is_watertight_and_sphere_topology() {
        let mb = Metaball::<f64>::new(
            vec![
                ControlPoint::new(Point3::new(0.4, 0.0, 0.1), 0.8),
                ControlPoint::new(Point3::new(-0.4, 0.1, -0.1), 0.9),
            ],
            0.0,
        )
        .unwrap();
        let mesh = surface_mesh(&mb, 1.0, 48).unwrap();
        let counts = edge_use_counts(&mesh);
        assert!(counts.values().all(|&c| c == 2), "open or non-manifold edge");
        let v = mesh.vertices.len() as i64;
        let e = counts.len() as i64;
        let f = mesh.triangles.len() as i64;
        assert_eq!(v - e + f, 2, "expected a single closed genus-0 surface");
    }

    #[test]
    fn winding_is_outward() {
        let mesh = surface_mesh(&sphere(1.0), 1.0, 48).unwrap();
        for tri in &mesh.triangles {
            let a = mesh.vertices[tri[0]];
            let b = mesh.vertices[tri[1]];
            let c = mesh.vertices[tri[2]];
            let n = (b - a).cross(&(c - a));
            let centroid = (a.coords + b.coords + c.coords) / 3.0;
            assert!(n.dot(&centroid) > 0.0, "triangle wound inward");
        }
    }

    #[test]
    fn low_resolution_is_rejected() {
        assert!(matches!(
            surface_mesh(&sphere(1.0), 1.0, 8),
            Err(GeometryError::ResolutionTooLow { resolution: 8 })
        ));
    }

    #[test]
    fn empty_level_set_is_an_error() {
        // Two vanishing point sources, placed so no grid node coincides with
        // either one (a node on a control point registers as interior).
        let tiny = Metaball::<f64>::new(
            vec![
                ControlPoint::new(Point3::new(0.0123, 0.0045, 0.0067), 1e-30),
                ControlPoint::new(Point3::new(0.4711, 0.0045, 0.0067), 1e-30),
            ],
            1.0,
        )
        .unwrap();
        assert!(matches!(
            surface_mesh(&tiny, 1.0, 32),
            Err(GeometryError::EmptyLevelSet { .. })
        ));
    }
}

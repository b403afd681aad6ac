//! ASCII STL export of triangulated surfaces, plus a reader so exported
//! meshes can be checked and round-tripped. The reader returns a triangle
//! soup: three fresh vertices per facet, as the format stores them.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::mesh::TriMesh;
use crate::{real, Real};

use super::{parse_float, read_to_string, write_bytes, IoError};

pub fn mesh_to_stl<T: Real>(mesh: &TriMesh<T>, name: &str) -> String {
    let f = |v: T| v.to_f64().expect("scalar converts to f64");
    let mut out = String::new();
    writeln!(out, "solid {name}").unwrap();
    for tri in &mesh.triangles {
        let [a, b, c] = [
            mesh.vertices[tri[0]],
            mesh.vertices[tri[1]],
            mesh.vertices[tri[2]],
        ];
        let normal = (b - a).cross(&(c - a));
        let normal = if normal.norm() > T::zero() {
            normal.normalize()
        } else {
            Vector3::zeros()
        };
        writeln!(
            out,
            "  facet normal {} {} {}",
            f(normal.x),
            f(normal.y),
            f(normal.z)
        )
        .unwrap();
        writeln!(out, "    outer loop").unwrap();
        for p in [a, b, c] {
            writeln!(out, "      vertex {} {} {}", f(p.x), f(p.y), f(p.z)).unwrap();
        }
        writeln!(out, "    endloop").unwrap();
        writeln!(out, "  endfacet").unwrap();
    }
    writeln!(out, "endsolid {name}").unwrap();
    out
}

pub fn parse_stl<T: Real>(text: &str, path: &Path) -> Result<TriMesh<T>, IoError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, raw)| (i + 1, raw.trim()))
        .filter(|(_, line)| !line.is_empty());

    let (number, header) = lines
        .next()
        .ok_or_else(|| IoError::structure(path, "empty file: expected `solid <name>`"))?;
    if !header.starts_with("solid") {
        return Err(IoError::line(path, number, "expected `solid <name>`"));
    }

    let mut mesh = TriMesh {
        vertices: Vec::new(),
        triangles: Vec::new(),
    };
    loop {
        let (number, line) = lines
            .next()
            .ok_or_else(|| IoError::structure(path, "file ends before `endsolid`"))?;
        if line.starts_with("endsolid") {
            break;
        }
        if !line.starts_with("facet normal") {
            return Err(IoError::line(path, number, "expected `facet normal` or `endsolid`"));
        }
        let mut expect = |keyword: &str| -> Result<(usize, &str), IoError> {
            let (number, line) = lines
                .next()
                .ok_or_else(|| IoError::structure(path, format!("file ends inside a facet, expected `{keyword}`")))?;
            if line.starts_with(keyword) {
                Ok((number, line))
            } else {
                Err(IoError::line(path, number, format!("expected `{keyword}`")))
            }
        };
        expect("outer loop")?;
        let base = mesh.vertices.len();
        for _ in 0..3 {
            let (number, line) = expect("vertex")?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(IoError::line(path, number, "expected `vertex x y z`"));
            }
            let mut v = [0.0; 3];
            for (slot, token) in v.iter_mut().zip(&fields[1..]) {
                *slot = parse_float(path, number, token, "vertex coordinate")?;
            }
            mesh.vertices
                .push(Point3::new(real::<T>(v[0]), real::<T>(v[1]), real::<T>(v[2])));
        }
        expect("endloop")?;
        expect("endfacet")?;
        mesh.triangles.push([base, base + 1, base + 2]);
    }
    Ok(mesh)
}

pub fn write_stl<T: Real>(path: &Path, mesh: &TriMesh<T>, name: &str) -> Result<(), IoError> {
    write_bytes(path, mesh_to_stl(mesh, name).as_bytes())
}

pub fn read_stl<T: Real>(path: &Path) -> Result<TriMesh<T>, IoError> {
    parse_stl(&read_to_string(path)?, path)
}

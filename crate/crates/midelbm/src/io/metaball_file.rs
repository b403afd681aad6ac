//! Shape parameter file: a `metaball <count> <sphero_radius>` header line
//! followed by one `x y z weight` row per control point. Floats are written
//! in shortest round-trip form, so read(write(shape)) is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use crate::geometry::{ControlPoint, Metaball};
use crate::{real, Real};

use super::{content_lines, parse_count, parse_float, read_to_string, write_bytes, IoError};

pub fn metaball_to_string<T: Real>(shape: &Metaball<T>) -> String {
    let f = |v: T| v.to_f64().expect("scalar converts to f64");
    let mut out = String::new();
    writeln!(
        out,
        "metaball {} {}",
        shape.control_points().len(),
        f(shape.sphero_radius())
    )
    .unwrap();
    for cp in shape.control_points() {
        writeln!(
            out,
            "{} {} {} {}",
            f(cp.position.x),
            f(cp.position.y),
            f(cp.position.z),
            f(cp.weight)
        )
        .unwrap();
    }
    out
}

pub fn parse_metaball<T: Real>(text: &str, path: &Path) -> Result<Metaball<T>, IoError> {
    let mut lines = content_lines(text);
    let (header_line, header) = lines
        .next()
        .ok_or_else(|| IoError::structure(path, "empty file: expected a metaball header"))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 3 || tokens[0] != "metaball" {
        return Err(IoError::line(
            path,
            header_line,
            "expected header `metaball <count> <sphero_radius>`",
        ));
    }
    let declared = parse_count(path, header_line, tokens[1], "control point count")?;
    let sphero = parse_float(path, header_line, tokens[2], "sphero radius")?;

    let mut points = Vec::with_capacity(declared);
    for (number, line) in lines {
        if points.len() == declared {
            return Err(IoError::line(
                path,
                number,
                format!("more control points than the declared {declared}"),
            ));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(IoError::line(
                path,
                number,
                format!("expected 4 fields `x y z weight`, found {}", fields.len()),
            ));
        }
        let mut v = [0.0; 4];
        for (slot, token) in v.iter_mut().zip(&fields) {
            *slot = parse_float(path, number, token, "control point field")?;
        }
        points.push(ControlPoint::new(
            Point3::new(real::<T>(v[0]), real::<T>(v[1]), real::<T>(v[2])),
            real::<T>(v[3]),
        ));
    }
    if points.len() != declared {
        return Err(IoError::structure(
            path,
            format!(
                "header declares {declared} control points, found {}",
                points.len()
            ),
        ));
    }
    Metaball::new(points, real::<T>(sphero))
        .map_err(|e| IoError::structure(path, format!("invalid shape: {e}")))
}

pub fn write_metaball<T: Real>(path: &Path, shape: &Metaball<T>) -> Result<(), IoError> {
    write_bytes(path, metaball_to_string(shape).as_bytes())
}

pub fn read_metaball<T: Real>(path: &Path) -> Result<Metaball<T>, IoError> {
    parse_metaball(&read_to_string(path)?, path)
}

//! Legacy structured-points VTK snapshots of the fluid field: density,
//! velocity and a node-class tag per lattice node, ASCII by default with a
//! big-endian binary variant for large runs. Nodes are exported as the
//! points of the grid, with the origin shifted half a cell inside the
//! domain corner, so readers see values exactly where they live.

use std::fmt::Write as _;
use std::path::Path;

use crate::lbm::{LatticeField, NodeClass};
use crate::Real;

use super::{read_bytes, write_bytes, IoError};

const TITLE: &str = "field snapshot";

/// Node-class codes stored in the `node_class` array.
pub const CLASS_FLUID: u8 = 0;
pub const CLASS_BOUNDARY: u8 = 1;
pub const CLASS_SOLID: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct VtkSnapshot {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: f64,
    /// One density per node, x fastest. Solid nodes carry 0.
    pub density: Vec<f64>,
    /// One velocity per node. Solid nodes carry zeros.
    pub velocity: Vec<[f64; 3]>,
    /// One class code per node; see the `CLASS_*` constants.
    pub node_class: Vec<u8>,
}

/// Captures the macroscopic state of `field`. Solid nodes hold no fluid, so
/// their density and velocity are written as zero rather than whatever the
/// covered populations contain.
pub fn snapshot_from_field<T: Real>(field: &LatticeField<T>) -> VtkSnapshot {
    let f = |v: T| v.to_f64().expect("scalar converts to f64");
    let [nx, ny, nz] = field.dims();
    let n = nx * ny * nz;
    let mut snapshot = VtkSnapshot {
        dims: field.dims(),
        origin: {
            let half = f(field.spec().dx()) * 0.5;
            let o = field.origin();
            [f(o.x) + half, f(o.y) + half, f(o.z) + half]
        },
        spacing: f(field.spec().dx()),
        density: Vec::with_capacity(n),
        velocity: Vec::with_capacity(n),
        node_class: Vec::with_capacity(n),
    };
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let cell = field.cell_index(ix, iy, iz);
                match field.node_class(ix, iy, iz) {
                    NodeClass::Solid { .. } => {
                        snapshot.density.push(0.0);
                        snapshot.velocity.push([0.0; 3]);
                        snapshot.node_class.push(CLASS_SOLID);
                    }
                    class => {
                        let u = field.velocity_at(cell);
                        snapshot.density.push(f(field.density_at(cell)));
                        snapshot.velocity.push([f(u.x), f(u.y), f(u.z)]);
                        snapshot.node_class.push(match class {
                            NodeClass::Fluid => CLASS_FLUID,
                            _ => CLASS_BOUNDARY,
                        });
                    }
                }
            }
        }
    }
    snapshot
}

pub fn vtk_to_bytes(snapshot: &VtkSnapshot, binary: bool) -> Vec<u8> {
    let n = snapshot.density.len();
    let mut header = String::new();
    writeln!(header, "# vtk DataFile Version 3.0").unwrap();
    writeln!(header, "{TITLE}").unwrap();
    writeln!(header, "{}", if binary { "BINARY" } else { "ASCII" }).unwrap();
    writeln!(header, "DATASET STRUCTURED_POINTS").unwrap();
    writeln!(
        header,
        "DIMENSIONS {} {} {}",
        snapshot.dims[0], snapshot.dims[1], snapshot.dims[2]
    )
    .unwrap();
    writeln!(
        header,
        "ORIGIN {} {} {}",
        snapshot.origin[0], snapshot.origin[1], snapshot.origin[2]
    )
    .unwrap();
    writeln!(
        header,
        "SPACING {0} {0} {0}",
        snapshot.spacing
    )
    .unwrap();
    writeln!(header, "POINT_DATA {n}").unwrap();

    let mut out = header.into_bytes();
    let section = |out: &mut Vec<u8>, text: &str| {
        out.extend_from_slice(text.as_bytes());
        out.push(b'\n');
    };

    section(&mut out, "SCALARS density double 1");
    section(&mut out, "LOOKUP_TABLE default");
    if binary {
        for &rho in &snapshot.density {
            out.extend_from_slice(&rho.to_be_bytes());
        }
        out.push(b'\n');
    } else {
        let mut text = String::new();
        for &rho in &snapshot.density {
            writeln!(text, "{rho}").unwrap();
        }
        out.extend_from_slice(text.as_bytes());
    }

    section(&mut out, "VECTORS velocity double");
    if binary {
        for u in &snapshot.velocity {
            for c in u {
                out.extend_from_slice(&c.to_be_bytes());
            }
        }
        out.push(b'\n');
    } else {
        let mut text = String::new();
        for u in &snapshot.velocity {
            writeln!(text, "{} {} {}", u[0], u[1], u[2]).unwrap();
        }
        out.extend_from_slice(text.as_bytes());
    }

    section(&mut out, "SCALARS node_class int 1");
    section(&mut out, "LOOKUP_TABLE default");
    if binary {
        for &class in &snapshot.node_class {
            out.extend_from_slice(&(class as i32).to_be_bytes());
        }
        out.push(b'\n');
    } else {
        let mut text = String::new();
        for &class in &snapshot.node_class {
            writeln!(text, "{class}").unwrap();
        }
        out.extend_from_slice(text.as_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take_line(&mut self) -> Result<(usize, &'a str), IoError> {
        if self.pos >= self.bytes.len() {
            return Err(IoError::structure(self.path, "unexpected end of file"));
        }
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
        let raw = &rest[..end];
        self.pos += end + 1;
        self.line += 1;
        let text = std::str::from_utf8(raw).map_err(|_| {
            IoError::line(self.path, self.line, "line is not valid UTF-8")
        })?;
        Ok((self.line, text.trim_end()))
    }

    fn expect(&mut self, prefix: &str) -> Result<(usize, &'a str), IoError> {
        let (number, line) = self.take_line()?;
        if line.starts_with(prefix) {
            Ok((number, line))
        } else {
            Err(IoError::line(
                self.path,
                number,
                format!("expected `{prefix}`, found {line:?}"),
            ))
        }
    }

    fn take_raw(&mut self, count: usize) -> Result<&'a [u8], IoError> {
        if self.pos + count > self.bytes.len() {
            return Err(IoError::structure(
                self.path,
                "binary section is shorter than the declared point count",
            ));
        }
        let raw = &self.bytes[self.pos..self.pos + count];
        self.pos += count;
        Ok(raw)
    }

    /// Collects `count` whitespace-separated ASCII floats, spanning as many
    /// lines as needed.
    fn ascii_floats(&mut self, count: usize) -> Result<Vec<f64>, IoError> {
        let mut values = Vec::with_capacity(count);
        while values.len() < count {
            let (number, line) = self.take_line()?;
            for token in line.split_whitespace() {
                if values.len() == count {
                    return Err(IoError::line(self.path, number, "more values than declared"));
                }
                values.push(super::parse_float(self.path, number, token, "field value")?);
            }
        }
        Ok(values)
    }

    fn floats(&mut self, count: usize, binary: bool) -> Result<Vec<f64>, IoError> {
        if !binary {
            return self.ascii_floats(count);
        }
        let raw = self.take_raw(count * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
            .collect();
        self.skip_newline();
        Ok(values)
    }

    fn ints(&mut self, count: usize, binary: bool) -> Result<Vec<i64>, IoError> {
        if binary {
            let raw = self.take_raw(count * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| i32::from_be_bytes(c.try_into().unwrap()) as i64)
                .collect();
            self.skip_newline();
            Ok(values)
        } else {
            Ok(self
                .ascii_floats(count)?
                .into_iter()
                .map(|v| v as i64)
                .collect())
        }
    }

    fn skip_newline(&mut self) {
        if self.bytes.get(self.pos) == Some(&b'\n') {
            self.pos += 1;
            self.line += 1;
        }
    }
}

fn tail_counts(path: &Path, number: usize, line: &str, skip: usize) -> Result<Vec<usize>, IoError> {
    line.split_whitespace()
        .skip(skip)
        .map(|token| super::parse_count(path, number, token, "header value"))
        .collect()
}

pub fn parse_vtk(bytes: &[u8], path: &Path) -> Result<VtkSnapshot, IoError> {
    let mut r = Reader {
        bytes,
        pos: 0,
        line: 0,
        path,
    };
    r.expect("# vtk DataFile Version")?;
    r.take_line()?; // title, free text
    let (number, mode) = r.take_line()?;
    let binary = match mode {
        "ASCII" => false,
        "BINARY" => true,
        other => {
            return Err(IoError::line(
                path,
                number,
                format!("expected ASCII or BINARY, found {other:?}"),
            ))
        }
    };
    r.expect("DATASET STRUCTURED_POINTS")?;

    let (number, line) = r.expect("DIMENSIONS")?;
    let dims = tail_counts(path, number, line, 1)?;
    if dims.len() != 3 || dims.contains(&0) {
        return Err(IoError::line(path, number, "expected three positive dimensions"));
    }
    let dims = [dims[0], dims[1], dims[2]];

    let (number, line) = r.expect("ORIGIN")?;
    let origin: Vec<f64> = line
        .split_whitespace()
        .skip(1)
        .map(|t| super::parse_float(path, number, t, "origin"))
        .collect::<Result<_, _>>()?;
    if origin.len() != 3 {
        return Err(IoError::line(path, number, "expected three origin values"));
    }

    let (number, line) = r.expect("SPACING")?;
    let spacing: Vec<f64> = line
        .split_whitespace()
        .skip(1)
        .map(|t| super::parse_float(path, number, t, "spacing"))
        .collect::<Result<_, _>>()?;
    if spacing.len() != 3 || spacing[0] != spacing[1] || spacing[0] != spacing[2] {
        return Err(IoError::line(path, number, "expected uniform spacing"));
    }

    let (number, line) = r.expect("POINT_DATA")?;
    let declared = tail_counts(path, number, line, 1)?;
    let n = dims[0] * dims[1] * dims[2];
    if declared != vec![n] {
        return Err(IoError::line(
            path,
            number,
            format!("POINT_DATA must match DIMENSIONS ({n} points)"),
        ));
    }

    r.expect("SCALARS density")?;
    r.expect("LOOKUP_TABLE")?;
    let density = r.floats(n, binary)?;

    r.expect("VECTORS velocity")?;
    let flat = r.floats(3 * n, binary)?;
    let velocity = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();

    r.expect("SCALARS node_class")?;
    r.expect("LOOKUP_TABLE")?;
    let node_class = r
        .ints(n, binary)?
        .into_iter()
        .map(|v| match v {
            0..=2 => Ok(v as u8),
            other => Err(IoError::structure(
                path,
                format!("node class {other} is outside the documented codes 0..=2"),
            )),
        })
        .collect::<Result<_, _>>()?;

    Ok(VtkSnapshot {
        dims,
        origin: [origin[0], origin[1], origin[2]],
        spacing: spacing[0],
        density,
        velocity,
        node_class,
    })
}

pub fn write_vtk(path: &Path, snapshot: &VtkSnapshot, binary: bool) -> Result<(), IoError> {
    write_bytes(path, &vtk_to_bytes(snapshot, binary))
}

pub fn read_vtk(path: &Path) -> Result<VtkSnapshot, IoError> {
    parse_vtk(&read_bytes(path)?, path)
}

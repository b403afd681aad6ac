//! File formats: shape parameter files, point clouds in and field
//! snapshots, particle series, surface meshes, fit reports and run
//! manifests out. Byte layouts are documented in docs/formats.md; every
//! writer here has a matching reader so emitted artifacts round-trip.

mod cloud;
mod manifest;
mod metaball_file;
mod report;
mod series;
mod stl;
mod vtk;

pub use cloud::{parse_ply, parse_xyz, read_cloud};
pub use manifest::{sha256_hex, RunFailure, RunManifest, MANIFEST_FILE};
pub use metaball_file::{metaball_to_string, parse_metaball, read_metaball, write_metaball};
pub use report::FitReport;
pub use series::{parse_series_csv, series_to_csv, write_series_csv, PARTICLE_COLUMNS};
pub use stl::{mesh_to_stl, parse_stl, read_stl, write_stl};
pub use vtk::{read_vtk, snapshot_from_field, vtk_to_bytes, write_vtk, VtkSnapshot};

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed content at a specific line (1-based).
    #[error("{}:{line}: {message}", path.display())]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
    /// Malformed content without a useful line anchor.
    #[error("{}: {message}", path.display())]
    Structure { path: PathBuf, message: String },
}

impl IoError {
    fn line(path: &Path, line: usize, message: impl Into<String>) -> Self {
        IoError::Line {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn structure(path: &Path, message: impl Into<String>) -> Self {
        IoError::Structure {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Lines that carry content, as (1-based number, trimmed text). Blank lines
/// and `#` comments are skipped by every ASCII format in this module.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, raw)| (i + 1, raw.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
}

fn parse_float(path: &Path, line: usize, token: &str, what: &str) -> Result<f64, IoError> {
    let value: f64 = token
        .parse()
        .map_err(|_| IoError::line(path, line, format!("{what}: not a number: {token:?}")))?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(IoError::line(path, line, format!("{what}: not finite")))
    }
}

fn parse_count(path: &Path, line: usize, token: &str, what: &str) -> Result<usize, IoError> {
    token
        .parse()
        .map_err(|_| IoError::line(path, line, format!("{what}: not a count: {token:?}")))
}

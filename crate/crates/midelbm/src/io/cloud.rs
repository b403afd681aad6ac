//! Point-cloud ingestion: whitespace-separated XYZ rows, or ASCII PLY with
//! a vertex element. PLY faces and other elements are skipped; only vertex
//! positions feed the fitting pipeline.

use std::path::Path;

use nalgebra::Point3;

use crate::{real, Real};

use super::{content_lines, parse_count, parse_float, read_to_string, IoError};

/// Plain XYZ: three floats per line.
pub fn parse_xyz<T: Real>(text: &str, path: &Path) -> Result<Vec<Point3<T>>, IoError> {
    let mut points = Vec::new();
    for (number, line) in content_lines(text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(IoError::line(
                path,
                number,
                format!("expected 3 fields `x y z`, found {}", fields.len()),
            ));
        }
        let mut v = [0.0; 3];
        for (slot, token) in v.iter_mut().zip(&fields) {
            *slot = parse_float(path, number, token, "coordinate")?;
        }
        points.push(Point3::new(real::<T>(v[0]), real::<T>(v[1]), real::<T>(v[2])));
    }
    if points.is_empty() {
        return Err(IoError::structure(path, "no points"));
    }
    Ok(points)
}

struct PlyElement {
    name: String,
    rows: usize,
    /// Property names in declaration order; one token per property per row.
    properties: Vec<String>,
}

/// ASCII PLY 1.0. The vertex element must carry scalar `x`, `y`, `z`
/// properties; list properties inside it are rejected because they break
/// token alignment. Non-vertex elements are consumed and ignored.
pub fn parse_ply<T: Real>(text: &str, path: &Path) -> Result<Vec<Point3<T>>, IoError> {
    let mut lines = text.lines().enumerate().map(|(i, raw)| (i + 1, raw.trim()));

    let (number, magic) = lines
        .next()
        .ok_or_else(|| IoError::structure(path, "empty file: expected `ply`"))?;
    if magic != "ply" {
        return Err(IoError::line(path, number, "expected `ply` magic line"));
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut format_seen = false;
    loop {
        let (number, line) = lines
            .next()
            .ok_or_else(|| IoError::structure(path, "header never reaches `end_header`"))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                if tokens.len() != 3 || tokens[1] != "ascii" {
                    return Err(IoError::line(path, number, "only `format ascii 1.0` is supported"));
                }
                format_seen = true;
            }
            Some("element") => {
                if tokens.len() != 3 {
                    return Err(IoError::line(path, number, "expected `element <name> <count>`"));
                }
                elements.push(PlyElement {
                    name: tokens[1].to_string(),
                    rows: parse_count(path, number, tokens[2], "element count")?,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements.last_mut().ok_or_else(|| {
                    IoError::line(path, number, "property declared before any element")
                })?;
                if tokens.get(1) == Some(&"list") {
                    if element.name == "vertex" {
                        return Err(IoError::line(
                            path,
                            number,
                            "list properties are not supported on the vertex element",
                        ));
                    }
                    // A list property means non-uniform rows, but those
                    // elements are skipped line-wise anyway.
                    element.properties.push(String::new());
                } else if tokens.len() == 3 {
                    element.properties.push(tokens[2].to_string());
                } else {
                    return Err(IoError::line(path, number, "expected `property <type> <name>`"));
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(IoError::line(path, number, format!("unknown header keyword {other:?}")));
            }
        }
    }
    if !format_seen {
        return Err(IoError::structure(path, "header is missing the `format` line"));
    }

    let mut points = Vec::new();
    for element in &elements {
        if element.name != "vertex" {
            for _ in 0..element.rows {
                lines.next().ok_or_else(|| {
                    IoError::structure(
                        path,
                        format!("{} element ends before its {} rows", element.name, element.rows),
                    )
                })?;
            }
            continue;
        }
        let column = |axis: &str| {
            element
                .properties
                .iter()
                .position(|p| p == axis)
                .ok_or_else(|| {
                    IoError::structure(path, format!("vertex element has no `{axis}` property"))
                })
        };
        let columns = [column("x")?, column("y")?, column("z")?];
        points.reserve(element.rows);
        for _ in 0..element.rows {
            let (number, line) = lines.next().ok_or_else(|| {
                IoError::structure(
                    path,
                    format!("vertex element ends before its {} rows", element.rows),
                )
            })?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != element.properties.len() {
                return Err(IoError::line(
                    path,
                    number,
                    format!(
                        "expected {} fields, found {}",
                        element.properties.len(),
                        fields.len()
                    ),
                ));
            }
            let mut v = [0.0; 3];
            for (slot, &column) in v.iter_mut().zip(&columns) {
                *slot = parse_float(path, number, fields[column], "vertex coordinate")?;
            }
            points.push(Point3::new(real::<T>(v[0]), real::<T>(v[1]), real::<T>(v[2])));
        }
    }
    if points.is_empty() {
        return Err(IoError::structure(path, "no points"));
    }
    Ok(points)
}

/// Reads a cloud, picking the parser from the file extension.
pub fn read_cloud<T: Real>(path: &Path) -> Result<Vec<Point3<T>>, IoError> {
    let extension = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match extension.as_deref() {
        Some("xyz") => parse_xyz(&read_to_string(path)?, path),
        Some("ply") => parse_ply(&read_to_string(path)?, path),
        _ => Err(IoError::structure(
            path,
            "unsupported point-cloud extension (expected .xyz or .ply)",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> &'static Path {
        Path::new("cloud")
    }

    #[test]
    fn xyz_rows_parse_in_order() {
        let text = "# header comment\n0 0 1\n0.5 -0.25 1e-3\n";
        let points: Vec<Point3<f64>> = parse_xyz(text, ctx()).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[1], Point3::new(0.5, -0.25, 1e-3));
    }

    #[test]
    fn xyz_errors_name_the_line() {
        let err = parse_xyz::<f64>("0 0 1\n0 zero 1\n", ctx()).unwrap_err();
        assert!(matches!(err, IoError::Line { line: 2, .. }), "{err:?}");
        let err = parse_xyz::<f64>("0 0 1 9\n", ctx()).unwrap_err();
        assert!(matches!(err, IoError::Line { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn an_empty_cloud_reports_no_points() {
        for text in ["", "# only comments\n"] {
            let err = parse_xyz::<f64>(text, ctx()).unwrap_err();
            assert!(err.to_string().contains("no points"), "{err}");
        }
    }

    #[test]
    fn ply_vertices_parse_with_extra_properties_and_faces() {
        let text = "ply\n\
                    format ascii 1.0\n\
                    comment made by hand\n\
                    element vertex 2\n\
                    property float x\n\
                    property float y\n\
                    property float z\n\
                    property uchar red\n\
                    element face 1\n\
                    property list uchar int vertex_indices\n\
                    end_header\n\
                    0 0 1 255\n\
                    0.5 -0.25 0.001 0\n\
                    3 0 1 0\n";
        let points: Vec<Point3<f64>> = parse_ply(text, ctx()).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[1], Point3::new(0.5, -0.25, 0.001));
    }

    #[test]
    fn ply_elements_before_vertex_are_skipped() {
        let text = "ply\nformat ascii 1.0\n\
                    element edge 2\nproperty int a\nproperty int b\n\
                    element vertex 1\nproperty float x\nproperty float y\nproperty float z\n\
                    end_header\n0 1\n1 2\n7 8 9\n";
        let points: Vec<Point3<f64>> = parse_ply(text, ctx()).unwrap();
        assert_eq!(points, vec![Point3::new(7.0, 8.0, 9.0)]);
    }

    #[test]
    fn ply_rejects_binary_and_truncation_and_bad_rows() {
        let binary = "ply\nformat binary_little_endian 1.0\nend_header\n";
        assert!(parse_ply::<f64>(binary, ctx()).is_err());

        let truncated = "ply\nformat ascii 1.0\nelement vertex 2\n\
                         property float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        let err = parse_ply::<f64>(truncated, ctx()).unwrap_err();
        assert!(err.to_string().contains("before its 2 rows"));

        let bad_row = "ply\nformat ascii 1.0\nelement vertex 1\n\
                       property float x\nproperty float y\nproperty float z\nend_header\n0 0\n";
        let err = parse_ply::<f64>(bad_row, ctx()).unwrap_err();
        assert!(matches!(err, IoError::Line { line: 8, .. }), "{err:?}");

        let no_x = "ply\nformat ascii 1.0\nelement vertex 1\n\
                    property float y\nproperty float z\nend_header\n0 0\n";
        let err = parse_ply::<f64>(no_x, ctx()).unwrap_err();
        assert!(err.to_string().contains("no `x` property"));
    }

    #[test]
    fn cloud_dispatch_follows_the_extension() {
        let dir = std::env::temp_dir().join(format!("midelbm_cloud_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let xyz = dir.join("a.xyz");
        std::fs::write(&xyz, "1 2 3\n").unwrap();
        let points: Vec<Point3<f64>> = read_cloud(&xyz).unwrap();
        assert_eq!(points, vec![Point3::new(1.0, 2.0, 3.0)]);

        let other = dir.join("a.csv");
        std::fs::write(&other, "1,2,3\n").unwrap();
        let err = read_cloud::<f64>(&other).unwrap_err();
        assert!(err.to_string().contains("unsupported point-cloud extension"));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

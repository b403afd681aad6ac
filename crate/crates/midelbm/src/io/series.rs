//! Particle time series as CSV: one row per particle per sample, in the
//! fixed column order below. The order is versioned by writing it into the
//! run manifest, so downstream plotting can detect drift.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::engine::{ParticleRecord, TimeSeriesRecord};
use crate::{real, Real};

use super::{parse_count, parse_float, write_bytes, IoError};

pub const PARTICLE_COLUMNS: [&str; 19] = [
    "step", "time", "particle", "x", "y", "z", "vx", "vy", "vz", "wx", "wy", "wz", "fx", "fy",
    "fz", "tx", "ty", "tz", "contacts",
];

pub fn series_to_csv<T: Real>(records: &[TimeSeriesRecord<T>]) -> String {
    let f = |v: T| v.to_f64().expect("scalar converts to f64");
    let mut out = PARTICLE_COLUMNS.join(",");
    out.push('\n');
    for record in records {
        for (index, p) in record.particles.iter().enumerate() {
            writeln!(
                out,
                "{},{},{index},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                record.step,
                f(record.time),
                f(p.position.x),
                f(p.position.y),
                f(p.position.z),
                f(p.velocity.x),
                f(p.velocity.y),
                f(p.velocity.z),
                f(p.angular_velocity.x),
                f(p.angular_velocity.y),
                f(p.angular_velocity.z),
                f(p.hydro_force.x),
                f(p.hydro_force.y),
                f(p.hydro_force.z),
                f(p.hydro_torque.x),
                f(p.hydro_torque.y),
                f(p.hydro_torque.z),
                record.contacts,
            )
            .unwrap();
        }
    }
    out
}

pub fn parse_series_csv<T: Real>(
    text: &str,
    path: &Path,
) -> Result<Vec<TimeSeriesRecord<T>>, IoError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (number, header) = lines
        .next()
        .ok_or_else(|| IoError::structure(path, "empty file: expected a header row"))?;
    if header != PARTICLE_COLUMNS.join(",") {
        return Err(IoError::line(
            path,
            number,
            format!("unexpected columns (expected {})", PARTICLE_COLUMNS.join(",")),
        ));
    }

    let mut records: Vec<TimeSeriesRecord<T>> = Vec::new();
    for (number, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != PARTICLE_COLUMNS.len() {
            return Err(IoError::line(
                path,
                number,
                format!(
                    "expected {} fields, found {}",
                    PARTICLE_COLUMNS.len(),
                    fields.len()
                ),
            ));
        }
        let step = parse_count(path, number, fields[0], "step")?;
        let time = parse_float(path, number, fields[1], "time")?;
        let particle = parse_count(path, number, fields[2], "particle index")?;
        let contacts = parse_count(path, number, fields[18], "contact count")?;
        let mut v = [0.0; 15];
        for (slot, token) in v.iter_mut().zip(&fields[3..18]) {
            *slot = parse_float(path, number, token, "series value")?;
        }
        let vec3 = |offset: usize| {
            Vector3::new(
                real::<T>(v[offset]),
                real::<T>(v[offset + 1]),
                real::<T>(v[offset + 2]),
            )
        };
        let record = ParticleRecord {
            position: Point3::from(vec3(0)),
            velocity: vec3(3),
            angular_velocity: vec3(6),
            hydro_force: vec3(9),
            hydro_torque: vec3(12),
        };

        let start_new = records.last().map_or(true, |r| r.step != step);
        if start_new {
            if particle != 0 {
                return Err(IoError::line(
                    path,
                    number,
                    format!("sample must start at particle 0, found {particle}"),
                ));
            }
            records.push(TimeSeriesRecord {
                step,
                time: real::<T>(time),
                particles: vec![record],
                contacts,
            });
        } else {
            let sample = records.last_mut().unwrap();
            if particle != sample.particles.len() {
                return Err(IoError::line(
                    path,
                    number,
                    format!(
                        "particle index {particle} out of order (expected {})",
                        sample.particles.len()
                    ),
                ));
            }
            sample.particles.push(record);
        }
    }
    if records.is_empty() {
        return Err(IoError::structure(path, "no samples"));
    }
    Ok(records)
}

pub fn write_series_csv<T: Real>(
    path: &Path,
    records: &[TimeSeriesRecord<T>],
) -> Result<(), IoError> {
    write_bytes(path, series_to_csv(records).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> &'static Path {
        Path::new("particles.csv")
    }

    fn sample_series() -> Vec<TimeSeriesRecord<f64>> {
        let particle = |s: f64| ParticleRecord {
            position: Point3::new(0.1 * s, -0.2, 1e-3 * s),
            velocity: Vector3::new(0.0, s, 0.0),
            angular_velocity: Vector3::new(s, 0.0, -s),
            hydro_force: Vector3::new(1.25 * s, 0.0, 9.81),
            hydro_torque: Vector3::zeros(),
        };
        vec![
            TimeSeriesRecord {
                step: 0,
                time: 0.0,
                particles: vec![particle(0.0), particle(0.5)],
                contacts: 0,
            },
            TimeSeriesRecord {
                step: 10,
                time: 0.02,
                particles: vec![particle(1.0), particle(1.5)],
                contacts: 2,
            },
        ]
    }

    #[test]
    fn series_round_trip_exactly() {
        let series = sample_series();
        let text = series_to_csv(&series);
        let back: Vec<TimeSeriesRecord<f64>> = parse_series_csv(&text, ctx()).unwrap();
        assert_eq!(back, series);
    }

    #[test]
    fn the_header_is_the_documented_column_order() {
        let text = series_to_csv(&sample_series());
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "step,time,particle,x,y,z,vx,vy,vz,wx,wy,wz,fx,fy,fz,tx,ty,tz,contacts"
        );
    }

    #[test]
    fn malformed_rows_fail_with_their_line_number() {
        let mut text = series_to_csv(&sample_series());
        text = text.replacen("0.5", "half", 1);
        let err = parse_series_csv::<f64>(&text, ctx()).unwrap_err();
        assert!(matches!(err, IoError::Line { line: 3, .. }), "{err:?}");

        let reordered = format!(
            "{}\n10,0.02,1,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0\n",
            PARTICLE_COLUMNS.join(",")
        );
        let err = parse_series_csv::<f64>(&reordered, ctx()).unwrap_err();
        assert!(err.to_string().contains("particle 0"), "{err}");

        let err = parse_series_csv::<f64>("x,y\n", ctx()).unwrap_err();
        assert!(err.to_string().contains("unexpected columns"));
    }
}

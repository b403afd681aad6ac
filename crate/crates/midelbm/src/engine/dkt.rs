//! Normalized pair-settling series and the drafting / kissing / tumbling
//! phase times of a two-particle run.
//!
//! Heights are reported in units of the release height H, time in units of
//! t_r = √(H/g), velocity in units of √(H·g), angular speed in turns per
//! reference time (ω·t_r/2π) and the center separation in units of the
//! volume-equivalent diameter D_e.

use nalgebra::Vector3;

use super::{EngineError, TimeSeriesRecord};
use crate::{real, Real};

/// Center distance below which two particles of combined equivalent
/// diameter D_e count as touching, as a multiple of D_e.
const KISSING_FACTOR: f64 = 1.05;

#[derive(Debug, Clone, PartialEq)]
pub struct DktSample<T: Real> {
    /// t / t_r
    pub time: T,
    /// Vertical (z) positions over H.
    pub heights: [T; 2],
    /// Center separation over D_e.
    pub separation: T,
    /// Velocities over √(H·g).
    pub velocities: [Vector3<T>; 2],
    /// Angular speeds ‖ω‖·t_r/2π.
    pub angular_speeds: [T; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DktMetrics<T: Real> {
    pub samples: Vec<DktSample<T>>,
    /// Normalized time at which the center gap first starts shrinking.
    pub drafting_onset: Option<T>,
    /// Normalized time at which the gap first drops below the kissing
    /// threshold (a 5% margin on the combined equivalent radii).
    pub kissing: Option<T>,
    /// Normalized time at which the vertical rank order first flips.
    pub tumbling: Option<T>,
}

/// Normalize a two-particle series by the release height `height`, the
/// volume-equivalent diameter `equivalent_diameter` and the gravitational
/// acceleration `gravity`, and locate the three interaction phases.
pub fn dkt_metrics<T: Real>(
    records: &[TimeSeriesRecord<T>],
    height: T,
    equivalent_diameter: T,
    gravity: T,
) -> Result<DktMetrics<T>, EngineError> {
    if records.is_empty() {
        return Err(EngineError::EmptySeries);
    }
    for record in records {
        if record.particles.len() != 2 {
            return Err(EngineError::ParticleCount {
                expected: 2,
                got: record.particles.len(),
            });
        }
    }
    if !(height > T::zero()) {
        return Err(EngineError::NonPositiveArgument {
            what: "release height",
        });
    }
    if !(equivalent_diameter > T::zero()) {
        return Err(EngineError::NonPositiveArgument {
            what: "equivalent diameter",
        });
    }
    if !(gravity > T::zero()) {
        return Err(EngineError::NonPositiveArgument {
            what: "gravitational acceleration",
        });
    }

    let t_ref = (height / gravity).sqrt();
    let v_ref = (height * gravity).sqrt();
    let two_pi = T::two_pi();
    let turns = t_ref / two_pi;

    let mut samples = Vec::with_capacity(records.len());
    let mut gaps = Vec::with_capacity(records.len());
    let mut ranks = Vec::with_capacity(records.len());
    for record in records {
        let a = &record.particles[0];
        let b = &record.particles[1];
        let gap = (a.position - b.position).norm();
        gaps.push(gap);
        ranks.push(a.position.z - b.position.z);
        samples.push(DktSample {
            time: record.time / t_ref,
            heights: [a.position.z / height, b.position.z / height],
            separation: gap / equivalent_diameter,
            velocities: [a.velocity / v_ref, b.velocity / v_ref],
            angular_speeds: [
                a.angular_velocity.norm() * turns,
                b.angular_velocity.norm() * turns,
            ],
        });
    }

    let tol = real::<T>(1e-9);
    let drafting_onset = gaps
        .windows(2)
        .position(|w| w[1] < w[0] - tol * equivalent_diameter)
        .map(|k| samples[k].time);
    let kissing_threshold = real::<T>(KISSING_FACTOR) * equivalent_diameter;
    let kissing = gaps
        .iter()
        .position(|&gap| gap < kissing_threshold)
        .map(|k| samples[k].time);

    let rank_tol = tol * height;
    let initial_rank = ranks.iter().find(|r| r.abs() > rank_tol).copied();
    let tumbling = initial_rank.and_then(|first| {
        ranks
            .iter()
            .position(|&r| r.abs() > rank_tol && r * first < T::zero())
            .map(|k| samples[k].time)
    });

    Ok(DktMetrics {
        samples,
        drafting_onset,
        kissing,
        tumbling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ParticleRecord;
    use nalgebra::Point3;

    fn record(time: f64, a: [f64; 3], b: [f64; 3]) -> TimeSeriesRecord<f64> {
        let particle = |p: [f64; 3]| ParticleRecord {
            position: Point3::new(p[0], p[1], p[2]),
            velocity: Vector3::new(0.1, 0.0, -0.4),
            angular_velocity: Vector3::new(0.0, 0.3, 0.0),
            hydro_force: Vector3::zeros(),
            hydro_torque: Vector3::zeros(),
        };
        TimeSeriesRecord {
            step: 0,
            time,
            particles: vec![particle(a), particle(b)],
            contacts: 0,
        }
    }

    #[test]
    fn a_synthetic_overtaking_run_shows_all_three_phases_in_order() {
        // The trailing (upper) particle closes in, touches, and passes.
        let series = vec![
            record(0.0, [0.0, 0.0, 2.70], [0.04, 0.0, 2.55]),
            record(0.1, [0.0, 0.0, 2.60], [0.04, 0.0, 2.45]),
            record(0.2, [0.0, 0.0, 2.48], [0.04, 0.0, 2.38]),
            record(0.3, [0.0, 0.0, 2.36], [0.04, 0.0, 2.31]),
            record(0.4, [0.0, 0.0, 2.25], [0.04, 0.0, 2.24]),
            record(0.5, [0.0, 0.0, 2.14], [0.04, 0.0, 2.17]),
        ];
        let m = dkt_metrics(&series, 3.0, 0.1, 9.81).unwrap();
        let drafting = m.drafting_onset.expect("gap shrinks");
        let kissing = m.kissing.expect("gap passes the threshold");
        let tumbling = m.tumbling.expect("rank flips");
        assert!(drafting < kissing, "drafting {drafting} kissing {kissing}");
        assert!(kissing < tumbling, "kissing {kissing} tumbling {tumbling}");
        // Threshold is 1.05·D_e = 0.105; first such gap is at t = 0.3.
        let t_ref = (3.0f64 / 9.81).sqrt();
        assert!((kissing - 0.3 / t_ref).abs() < 1e-12);
    }

    #[test]
    fn equal_heights_never_define_a_rank_so_tumbling_never_fires() {
        let series = vec![
            record(0.0, [-0.2, 0.0, 1.0], [0.2, 0.0, 1.0]),
            record(0.1, [-0.3, 0.0, 0.8], [0.3, 0.0, 0.8]),
            record(0.2, [-0.4, 0.0, 0.6], [0.4, 0.0, 0.6]),
        ];
        let m = dkt_metrics(&series, 1.0, 0.1, 9.81).unwrap();
        assert_eq!(m.tumbling, None);
        assert_eq!(m.drafting_onset, None, "the pair separates");
    }

    #[test]
    fn unit_reference_scales_pass_the_series_through() {
        let series = vec![
            record(0.0, [0.0, 0.0, 0.9], [0.1, 0.0, 0.7]),
            record(0.25, [0.0, 0.0, 0.8], [0.1, 0.0, 0.6]),
        ];
        let m = dkt_metrics(&series, 1.0, 1.0, 1.0).unwrap();
        for (sample, raw) in m.samples.iter().zip(&series) {
            assert_eq!(sample.time, raw.time);
            assert_eq!(sample.heights[0], raw.particles[0].position.z);
            assert_eq!(sample.heights[1], raw.particles[1].position.z);
            assert_eq!(sample.velocities[0], raw.particles[0].velocity);
            let gap = (raw.particles[0].position - raw.particles[1].position).norm();
            assert_eq!(sample.separation, gap);
            // The angular channel alone keeps its conventional 2π factor:
            // it counts turns per reference time.
            let expected = raw.particles[0].angular_velocity.norm() / (2.0 * std::f64::consts::PI);
            assert!((sample.angular_speeds[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn series_with_the_wrong_particle_count_are_rejected() {
        let mut bad = record(0.0, [0.0; 3], [1.0, 0.0, 0.0]);
        bad.particles.pop();
        assert!(matches!(
            dkt_metrics(&[bad], 1.0, 1.0, 1.0),
            Err(EngineError::ParticleCount {
                expected: 2,
                got: 1
            })
        ));
        assert!(matches!(
            dkt_metrics::<f64>(&[], 1.0, 1.0, 1.0),
            Err(EngineError::EmptySeries)
        ));
    }
}

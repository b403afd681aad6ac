//! Long-horizon dynamics checks on the rigid-body world.

use midelbm::dem::{ContactParams, DemWorld, ParticleState, WallPlane};
use midelbm::geometry::{ControlPoint, Metaball};
use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3};

/// With no damping and no friction, a particle bouncing on a floor must keep
/// its mechanical energy; the airborne samples over 1e5 steps at the spring
/// stability time step are allowed to drift below one percent.
#[test]
fn bouncing_sphere_conserves_mechanical_energy() {
    let radius = 0.5;
    let sphero = 0.05;
    let mass = 1.0f64;
    let shape = Metaball::new(
        vec![ControlPoint::new(Point3::origin(), radius * radius)],
        sphero,
    )
    .unwrap();
    let moment = 0.4 * mass * (radius + sphero) * (radius + sphero);
    let particle = ParticleState::new(
        shape,
        mass,
        Matrix3::identity() * moment,
        Point3::new(0.0, 0.0, 0.7),
        UnitQuaternion::identity(),
    )
    .unwrap();
    let params = ContactParams {
        kn: 1e5,
        kt: 5e4,
        eta_n: 0.0,
        eta_t: 0.0,
        mu_s: 0.0,
    };
    let g = 9.81;
    // Just under the stability bound 0.1*sqrt(m/kn).
    let dt = 0.1 * (mass / params.kn).sqrt() * 0.999;
    let mut world = DemWorld::new(
        vec![particle],
        vec![WallPlane::new(Point3::origin(), Vector3::z()).unwrap()],
        params,
        Vector3::new(0.0, 0.0, -g),
        dt,
    )
    .unwrap();

    let energy = |world: &DemWorld<f64>| {
        let p = &world.particles()[0];
        0.5 * p.mass * p.velocity.norm_squared() + p.mass * g * p.position.z
    };
    let e0 = energy(&world);
    let mut worst: f64 = 0.0;
    let mut bounces = 0;
    let mut in_contact = false;
    for _ in 0..100_000 {
        let report = world.step().unwrap();
        let airborne = report.wall_contacts == 0;
        if airborne {
            if in_contact {
                bounces += 1;
            }
            worst = worst.max((energy(&world) - e0).abs() / e0);
        }
        in_contact = !airborne;
    }
    assert!(bounces > 10, "expected repeated bounces, saw {bounces}");
    assert!(worst < 0.01, "energy drifted by {worst:.3e}");
}

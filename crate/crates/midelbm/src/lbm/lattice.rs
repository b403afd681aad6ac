//! Discrete velocity sets and the physical lattice scaling.

use nalgebra::Vector3;

use super::LbmError;
use crate::{real, Real};

/// Directions are ordered rest-first with opposite pairs adjacent, so the
/// reverse of direction i > 0 is obtained by flipping the low bit of i − 1.
const D2Q9_DIRECTIONS: [[i32; 3]; 9] = [
    [0, 0, 0],
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [1, 1, 0],
    [-1, -1, 0],
    [1, -1, 0],
    [-1, 1, 0],
];

const D2Q9_WEIGHTS: [f64; 9] = [
    4.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
];

const D3Q15_DIRECTIONS: [[i32; 3]; 15] = [
    [0, 0, 0],
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
    [1, 1, 1],
    [-1, -1, -1],
    [1, 1, -1],
    [-1, -1, 1],
    [1, -1, 1],
    [-1, 1, -1],
    [1, -1, -1],
    [-1, 1, 1],
];

const D3Q15_WEIGHTS: [f64; 15] = [
    2.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 72.0,
    1.0 / 72.0,
    1.0 / 72.0,
    1.0 / 72.0,
    1.0 / 72.0,
    1.0 / 72.0,
    1.0 / 72.0,
    1.0 / 72.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocitySet {
    D2Q9,
    D3Q15,
}

impl VelocitySet {
    pub fn count(&self) -> usize {
        match self {
            VelocitySet::D2Q9 => 9,
            VelocitySet::D3Q15 => 15,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            VelocitySet::D2Q9 => 2,
            VelocitySet::D3Q15 => 3,
        }
    }

    /// Integer lattice direction of index `i` (units of one cell per step).
    pub fn direction(&self, i: usize) -> [i32; 3] {
        match self {
            VelocitySet::D2Q9 => D2Q9_DIRECTIONS[i],
            VelocitySet::D3Q15 => D3Q15_DIRECTIONS[i],
        }
    }

    pub fn weight_f64(&self, i: usize) -> f64 {
        match self {
            VelocitySet::D2Q9 => D2Q9_WEIGHTS[i],
            VelocitySet::D3Q15 => D3Q15_WEIGHTS[i],
        }
    }

    /// Index of the reversed direction.
    pub fn opposite(&self, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            ((i - 1) ^ 1) + 1
        }
    }
}

/// Physical scaling of the lattice: cell size, time step and the derived
/// lattice speed C = Δx/Δt. The speed of sound squared is C²/3.
#[derive(Debug, Clone, Copy)]
pub struct LatticeSpec<T: Real> {
    velocity_set: VelocitySet,
    dx: T,
    dt: T,
}

impl<T: Real> LatticeSpec<T> {
    pub fn new(velocity_set: VelocitySet, dx: T, dt: T) -> Result<Self, LbmError> {
        if !(dx > T::zero()) || !dx.is_finite() {
            return Err(LbmError::InvalidSpec {
                what: format!("cell size must be positive, got {:?}", dx.to_f64()),
            });
        }
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(LbmError::InvalidSpec {
                what: format!("time step must be positive, got {:?}", dt.to_f64()),
            });
        }
        Ok(Self {
            velocity_set,
            dx,
            dt,
        })
    }

    pub fn velocity_set(&self) -> VelocitySet {
        self.velocity_set
    }

    pub fn dx(&self) -> T {
        self.dx
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Lattice speed Δx/Δt.
    pub fn lattice_speed(&self) -> T {
        self.dx / self.dt
    }

    /// Speed of sound squared, C²/3.
    pub fn sound_speed_squared(&self) -> T {
        let c = self.lattice_speed();
        c * c / real::<T>(3.0)
    }

    pub fn weight(&self, i: usize) -> T {
        real::<T>(self.velocity_set.weight_f64(i))
    }

    /// Physical discrete velocity e_i in m/s.
    pub fn velocity(&self, i: usize) -> Vector3<T> {
        let d = self.velocity_set.direction(i);
        let c = self.lattice_speed();
        Vector3::new(
            real::<T>(d[0] as f64) * c,
            real::<T>(d[1] as f64) * c,
            real::<T>(d[2] as f64) * c,
        )
    }

    /// Second-order equilibrium distribution for direction `i`.
    pub fn equilibrium(&self, i: usize, rho: T, u: &Vector3<T>) -> T {
        let c2 = self.lattice_speed() * self.lattice_speed();
        let e = self.velocity(i);
        let eu = e.dot(u) / c2;
        let uu = u.dot(u) / c2;
        let three = real::<T>(3.0);
        let half = real::<T>(0.5);
        self.weight(i)
            * rho
            * (T::one() + three * eu + real::<T>(4.5) * eu * eu - three * half * uu)
    }
}

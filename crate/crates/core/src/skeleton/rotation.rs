//! Continuous 6D rotation representation.
//!
//! A rotation is stored as the first two columns of its matrix. Decoding runs
//! Gram-Schmidt on the two columns and completes the frame with a cross
//! product, so any pair of non-parallel 3-vectors maps to a proper rotation.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns whose normalized cross product falls below this are treated as parallel.
pub const PARALLEL_TOLERANCE: f64 = 1e-8;

/// Orthonormality tolerance accepted by [`matrix_to_rot6d`].
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    pub const IDENTITY: Rotation6D = Rotation6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn from_slice(values: &[f64]) -> Self {
        let mut out = [0.0; 6];
        out.copy_from_slice(&values[..6]);
        Rotation6D(out)
    }

    pub fn first(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn second(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Default for Rotation6D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

pub fn rot6d_to_matrix(r: &Rotation6D) -> Result<Matrix3<f64>> {
    if !r.is_finite() {
        return Err(Error::DegenerateRotation(format!("non-finite values {:?}", r.0)));
    }
    let a1 = r.first();
    let a2 = r.second();
    let n1 = a1.norm();
    let n2 = a2.norm();
    if n1 < PARALLEL_TOLERANCE || n2 < PARALLEL_TOLERANCE {
        return Err(Error::DegenerateRotation(format!("zero-length column in {:?}", r.0)));
    }
    if a1.cross(&a2).norm() / (n1 * n2) < PARALLEL_TOLERANCE {
        return Err(Error::DegenerateRotation(format!("parallel columns in {:?}", r.0)));
    }
    let b1 = a1 / n1;
    let b2 = (a2 - b1 * b1.dot(&a2)).normalize();
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> Result<Rotation6D> {
    check_rotation(m)?;
    Ok(Rotation6D([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]))
}

/// Fails with `NotARotation` unless `m` is orthonormal with determinant +1.
pub fn check_rotation(m: &Matrix3<f64>) -> Result<()> {
    let err = (m.transpose() * m - Matrix3::identity()).abs().max();
    if !err.is_finite() || err > ROTATION_TOLERANCE {
        return Err(Error::NotARotation(format!("orthonormality error {err:e}")));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::NotARotation(format!("determinant {det}")));
    }
    Ok(())
}

/// Rotation about a unit axis by `angle` radians (Rodrigues).
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let n = axis.norm();
    if n == 0.0 || angle == 0.0 {
        return Matrix3::identity();
    }
    let k = axis / n;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Heading of a root rotation: angle of its local +Z axis projected on the ground plane.
pub fn yaw_of(m: &Matrix3<f64>) -> f64 {
    m[(0, 2)].atan2(m[(2, 2)])
}

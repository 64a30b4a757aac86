use std::f64::consts::PI;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative 6-DoF pose: intrinsic X-Y-Z Euler angles plus a translation in
/// normalized volume coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerPose {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

impl EulerPose {
    /// Builds a pose, wrapping every angle into `[-pi, pi]`.
    pub fn new(alpha: f64, beta: f64, gamma: f64, t: [f64; 3]) -> Result<Self> {
        let all = [alpha, beta, gamma, t[0], t[1], t[2]];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!("non-finite pose {all:?}")));
        }
        Ok(Self {
            alpha: wrap_angle(alpha),
            beta: wrap_angle(beta),
            gamma: wrap_angle(gamma),
            tx: t[0],
            ty: t[1],
            tz: t[2],
        })
    }

    pub fn from_array(v: [f64; 6]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], [v[3], v[4], v[5]])
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.alpha, self.beta, self.gamma, self.tx, self.ty, self.tz]
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.tx, self.ty, self.tz]
    }

    pub fn angles(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

/// A proper rotation (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[(0, 0)] * p[0] + m[(0, 1)] * p[1] + m[(0, 2)] * p[2],
            m[(1, 0)] * p[0] + m[(1, 1)] * p[1] + m[(1, 2)] * p[2],
            m[(2, 0)] * p[0] + m[(2, 1)] * p[1] + m[(2, 2)] * p[2],
        ]
    }

    pub fn compose(&self, inner: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * inner.0)
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }

    /// Largest absolute entry of `R^T R - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).abs().max()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// `R = Rx(alpha) * Ry(beta) * Rz(gamma)`.
pub fn euler_to_rotation(pose: &EulerPose) -> RotationMatrix {
    RotationMatrix(rot_x(pose.alpha) * rot_y(pose.beta) * rot_z(pose.gamma))
}

/// Partial derivatives `dR/dalpha`, `dR/dbeta`, `dR/dgamma`.
pub fn euler_rotation_jacobian(pose: &EulerPose) -> [Matrix3<f64>; 3] {
    let (rx, ry, rz) = (rot_x(pose.alpha), rot_y(pose.beta), rot_z(pose.gamma));
    [
        drot_x(pose.alpha) * ry * rz,
        rx * drot_y(pose.beta) * rz,
        rx * ry * drot_z(pose.gamma),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_angles_give_identity() {
        let r = euler_to_rotation(&EulerPose::new(0.0, 0.0, 0.0, [0.3, -1.0, 2.0]).unwrap());
        assert_eq!(r.0, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = euler_to_rotation(&EulerPose::new(0.0, 0.0, PI / 2.0, [0.0; 3]).unwrap());
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r.0 - expected).abs().max() < 1e-12);
        let y = r.apply([1.0, 0.0, 0.0]);
        assert!((y[0]).abs() < 1e-12 && (y[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_rotations_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
            let r = euler_to_rotation(&EulerPose::new(a[0], a[1], a[2], [0.0; 3]).unwrap());
            assert!(r.orthonormality_error() < 1e-6);
            assert!((r.determinant() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn angles_are_wrapped() {
        let p = EulerPose::new(3.0 * PI, -7.0, 0.5, [0.0; 3]).unwrap();
        for a in p.angles() {
            assert!((-PI..=PI).contains(&a));
        }
        let r1 = euler_to_rotation(&p);
        let r2 = euler_to_rotation(&EulerPose {
            alpha: 3.0 * PI,
            beta: -7.0,
            gamma: 0.5,
            ..Default::default()
        });
        assert!((r1.0 - r2.0).abs().max() < 1e-12);
    }

    #[test]
    fn non_finite_pose_is_rejected() {
        assert!(EulerPose::new(f64::NAN, 0.0, 0.0, [0.0; 3]).is_err());
        assert!(EulerPose::new(0.0, 0.0, 0.0, [f64::INFINITY, 0.0, 0.0]).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = EulerPose::new(0.3, -0.7, 1.1, [0.0; 3]).unwrap();
        let jac = euler_rotation_jacobian(&p);
        let h = 1e-6;
        for k in 0..3 {
            let mut plus = p.to_array();
            let mut minus = p.to_array();
            plus[k] += h;
            minus[k] -= h;
            let rp = euler_to_rotation(&EulerPose::from_array(plus).unwrap()).0;
            let rm = euler_to_rotation(&EulerPose::from_array(minus).unwrap()).0;
            let fd = (rp - rm) / (2.0 * h);
            assert!((fd - jac[k]).abs().max() < 1e-8, "axis {k}");
        }
    }
}

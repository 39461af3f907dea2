//! Quaternions stored as `(w, x, y, z)`, plus the derivatives the
//! rasterizer and skinning code need.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_vec4(v: &Vector4<f64>) -> Self {
        Quat::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vec4(self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n * s;
        Quat::new(c, a.x, a.y, a.z)
    }

    pub fn norm(self) -> f64 {
        self.to_vec4().norm()
    }

    pub fn dot(self, other: Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn conj(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn scale(self, s: f64) -> Quat {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Scales to unit norm. Zero (or non-finite) input is an error.
    pub fn normalize(self) -> Result<Quat> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegenerateQuaternion);
        }
        Ok(self.scale(1.0 / n))
    }

    /// Hamilton product without renormalization.
    pub fn hamilton(self, b: Quat) -> Quat {
        let a = self;
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Composition `self ⊗ b`: `b` is applied first, then `self`.
    /// The product is renormalized to wash out rounding drift.
    pub fn mul(self, b: Quat) -> Quat {
        let p = self.hamilton(b);
        let n = p.norm();
        if n > 0.0 {
            p.scale(1.0 / n)
        } else {
            p
        }
    }

    /// Matrix `L(a)` with `a ⊗ b = L(a) · b`.
    pub fn left_matrix(self) -> Matrix4<f64> {
        let Quat { w, x, y, z } = self;
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, -z, y, //
            y, z, w, -x, //
            z, -y, x, w,
        )
    }

    /// Matrix `R(b)` with `a ⊗ b = R(b) · a`.
    pub fn right_matrix(self) -> Matrix4<f64> {
        let Quat { w, x, y, z } = self;
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, z, -y, //
            y, -z, w, x, //
            z, y, -x, w,
        )
    }

    /// Rotation matrix of a unit quaternion. No normalization is applied.
    pub fn to_rotmat(self) -> Matrix3<f64> {
        let Quat { w, x, y, z } = self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Pulls a gradient on `to_rotmat(self)` back to the four components.
    pub fn rotmat_vjp(self, g: &Matrix3<f64>) -> Vector4<f64> {
        let Quat { w, x, y, z } = self;
        let dw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
        let dx = 2.0
            * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
                + z * g[(2, 0)]
                + w * g[(2, 1)]
                - 2.0 * x * g[(2, 2)]);
        let dy = 2.0
            * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
                - w * g[(2, 0)]
                + z * g[(2, 1)]
                - 2.0 * y * g[(2, 2)]);
        let dz = 2.0
            * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
                - 2.0 * z * g[(1, 1)]
                + y * g[(1, 2)]
                + x * g[(2, 0)]
                + y * g[(2, 1)]);
        Vector4::new(dw, dx, dy, dz)
    }
}

/// Pulls a gradient on `q / |q|` back to the raw `q`.
pub fn normalize_vjp(raw: &Vector4<f64>, g: &Vector4<f64>) -> Vector4<f64> {
    let n = raw.norm();
    let u = raw / n;
    (g - u * u.dot(g)) / n
}

/// Unit quaternion of `raw`, falling back to identity for zero input.
pub(crate) fn unit_or_identity(raw: Quat) -> Quat {
    raw.normalize().unwrap_or(Quat::IDENTITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: Quat, b: Quat, tol: f64) -> bool {
        (a.to_vec4() - b.to_vec4()).norm() < tol
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(Quat::new(2.0, 0.0, 0.0, 0.0).normalize().unwrap(), Quat::IDENTITY);
        assert_eq!(
            Quat::new(0.0, 0.0, 0.0, 1.0).normalize().unwrap(),
            Quat::new(0.0, 0.0, 0.0, 1.0)
        );
        let q = Quat::new(1.0, 1.0, 1.0, 1.0).normalize().unwrap();
        assert!(close(q, Quat::new(0.5, 0.5, 0.5, 0.5), 1e-15));
        assert!(matches!(
            Quat::new(0.0, 0.0, 0.0, 0.0).normalize(),
            Err(Error::DegenerateQuaternion)
        ));
    }

    #[test]
    fn mul_examples() {
        let q = Quat::new(0.3, -0.2, 0.9, 0.1).normalize().unwrap();
        assert!(close(Quat::IDENTITY.mul(q), q, 1e-15));
        let z90 = Quat::from_axis_angle(&Vector3::z(), PI / 2.0);
        let z180 = Quat::from_axis_angle(&Vector3::z(), PI);
        assert!(close(z90.mul(z90), z180, 1e-12));
        assert!(close(q.mul(q.conj()), Quat::IDENTITY, 1e-15));
    }

    #[test]
    fn composition_order() {
        let a = Quat::from_axis_angle(&Vector3::new(1.0, 2.0, 0.5), 0.7);
        let b = Quat::from_axis_angle(&Vector3::new(-0.3, 0.2, 1.0), 1.9);
        let lhs = a.mul(b).to_rotmat();
        let rhs = a.to_rotmat() * b.to_rotmat();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn rotmat_examples() {
        assert_eq!(Quat::IDENTITY.to_rotmat(), Matrix3::identity());
        let r = Quat::from_axis_angle(&Vector3::z(), PI).to_rotmat();
        assert!((r - Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0))).norm() < 1e-12);
    }

    #[test]
    fn product_matrices() {
        let a = Quat::new(0.1, 0.7, -0.3, 0.2);
        let b = Quat::new(-0.5, 0.4, 0.8, -0.6);
        let p = a.hamilton(b).to_vec4();
        assert!((a.left_matrix() * b.to_vec4() - p).norm() < 1e-15);
        assert!((b.right_matrix() * a.to_vec4() - p).norm() < 1e-15);
    }

    #[test]
    fn rotmat_vjp_matches_finite_differences() {
        let q = Quat::new(0.4, -0.7, 0.2, 0.5);
        let g = Matrix3::new(0.3, -1.2, 0.5, 0.8, 0.1, -0.4, 0.9, 0.7, -0.2);
        let analytic = q.rotmat_vjp(&g);
        let h = 1e-6;
        for k in 0..4 {
            let mut p = q.to_vec4();
            let mut m = q.to_vec4();
            p[k] += h;
            m[k] -= h;
            let fp = Quat::from_vec4(&p).to_rotmat().component_mul(&g).sum();
            let fm = Quat::from_vec4(&m).to_rotmat().component_mul(&g).sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-8, "component {k}: {fd} vs {}", analytic[k]);
        }
    }

    proptest::proptest! {
        #[test]
        fn random_rotations_are_orthonormal(
            w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0
        ) {
            proptest::prop_assume!(Quat::new(w, x, y, z).norm() > 1e-3);
            let q = Quat::new(w, x, y, z).normalize().unwrap();
            proptest::prop_assert!((q.norm() - 1.0).abs() < 1e-12);
            let r = q.to_rotmat();
            proptest::prop_assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-10);
            proptest::prop_assert!((r.determinant() - 1.0).abs() < 1e-10);
        }
    }
}

use nalgebra::{Matrix2, Matrix4};

use crate::error::{Error, Result};

/// Principal square root of a 2×2 SPD matrix and its sensitivity.
///
/// Uses `√A = (A + √det(A)·I) / √(tr A + 2√det A)`. The sensitivity maps
/// `vec(dA)` to `vec(d√A)` (column-major `vec`) and solves
/// `d√A·√A + √A·d√A = dA`.
pub fn matrix_sqrt_2x2(a: &Matrix2<f64>) -> Result<(Matrix2<f64>, Matrix4<f64>)> {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if (a[(0, 1)] - a[(1, 0)]).abs() > 1e-12 * scale {
        return Err(Error::NotSpd);
    }
    let det = a.determinant();
    if !(a[(0, 0)] > 0.0 && det > 0.0) || !det.is_finite() {
        return Err(Error::NotSpd);
    }
    let sd = det.sqrt();
    let t = (a.trace() + 2.0 * sd).sqrt();
    let root = (a + Matrix2::identity() * sd) / t;
    Ok((root, sylvester_inverse(&root)))
}

/// Inverse of `X ↦ dX·X + X·dX` in `vec` form, i.e. `(Xᵀ⊗I + I⊗X)⁻¹`.
fn sylvester_inverse(x: &Matrix2<f64>) -> Matrix4<f64> {
    let i = Matrix2::identity();
    let k = x.transpose().kronecker(&i) + i.kronecker(x);
    k.try_inverse().expect("SPD square root gives an invertible Sylvester operator")
}

/// Pulls `dL/d√A` back to `dL/dA` given the sensitivity from
/// [`matrix_sqrt_2x2`].
pub fn sqrt_vjp(sensitivity: &Matrix4<f64>, d_root: &Matrix2<f64>) -> Matrix2<f64> {
    let v = nalgebra::Vector4::new(d_root[(0, 0)], d_root[(1, 0)], d_root[(0, 1)], d_root[(1, 1)]);
    let g = sensitivity.transpose() * v;
    Matrix2::new(g[0], g[2], g[1], g[3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_identity() {
        let (r, _) = matrix_sqrt_2x2(&Matrix2::new(4.0, 0.0, 0.0, 9.0)).unwrap();
        assert!((r - Matrix2::new(2.0, 0.0, 0.0, 3.0)).norm() < 1e-12);
        let (r, s) = matrix_sqrt_2x2(&Matrix2::identity()).unwrap();
        assert!((r - Matrix2::identity()).norm() < 1e-15);
        assert!((s - Matrix4::identity() * 0.5).norm() < 1e-15);
    }

    #[test]
    fn rejects_non_spd() {
        assert!(matrix_sqrt_2x2(&Matrix2::new(1.0, 2.0, 2.0, 1.0)).is_err());
        assert!(matrix_sqrt_2x2(&Matrix2::new(1.0, 0.5, 0.0, 1.0)).is_err());
        assert!(matrix_sqrt_2x2(&Matrix2::new(-1.0, 0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn square_root_squares_back() {
        let a = Matrix2::new(3.2, -1.1, -1.1, 0.9);
        let (r, _) = matrix_sqrt_2x2(&a).unwrap();
        assert!((r * r - a).norm() < 1e-10);
        assert!((r - r.transpose()).norm() < 1e-15);
    }

    #[test]
    fn sensitivity_matches_symmetric_finite_differences() {
        let a = Matrix2::new(2.0, 0.7, 0.7, 1.3);
        let (_, sens) = matrix_sqrt_2x2(&a).unwrap();
        let h = 1e-6;
        for (i, j) in [(0, 0), (1, 1), (0, 1)] {
            let mut e = Matrix2::zeros();
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            let fd = (matrix_sqrt_2x2(&(a + e * h)).unwrap().0 - matrix_sqrt_2x2(&(a - e * h)).unwrap().0) / (2.0 * h);
            let v = sens * nalgebra::Vector4::new(e[(0, 0)], e[(1, 0)], e[(0, 1)], e[(1, 1)]);
            let an = Matrix2::new(v[0], v[2], v[1], v[3]);
            assert!((an - fd).amax() < 1e-8, "{an} vs {fd}");
        }
    }
}

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::camera::Camera;
use crate::quat::{unit_or_identity, Quat};
use crate::scene::{build_covariance, sigmoid, Gaussian3D, GaussianScene};

/// Isotropic screen-space dilation added to every projected covariance (px²).
pub const DILATION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub gaussian_index: usize,
    pub mu2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub alpha_base: f64,
    pub color: Vector3<f64>,
    /// Screen radius beyond which `alpha_base · G'` drops under the alpha floor.
    pub radius: f64,
    pub(crate) cam_pos: Vector3<f64>,
    pub(crate) jacobian: Matrix2x3<f64>,
    pub(crate) cov3d: Matrix3<f64>,
    pub(crate) unit_q: Quat,
}

/// Projects one Gaussian's current state. Returns `None` when it lies at or
/// in front of the near plane.
pub fn project_gaussian(g: &Gaussian3D, index: usize, cam: &Camera) -> Option<Splat2D> {
    let w = cam.rotation();
    let t = w * g.mu + cam.translation();
    if t.z <= cam.near {
        return None;
    }
    let (x, y, z) = (t.x, t.y, t.z);
    let mu2d = Vector2::new(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy);
    let jac = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let unit_q = unit_or_identity(g.q);
    let cov3d = build_covariance(unit_q, &g.log_scale);
    let tw = jac * w;
    let cov2d = tw * cov3d * tw.transpose() + Matrix2::identity() * DILATION;
    let det = cov2d.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
    let alpha_base = sigmoid(g.opacity_logit);
    let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    // alpha_base · exp(-r²/2λ) ≥ 1/255  <=>  r² ≤ 2λ ln(255 alpha_base)
    let reach = (255.0 * alpha_base).ln();
    let radius = if reach > 0.0 {
        (2.0 * lambda_max * reach).sqrt()
    } else {
        0.0
    };
    Some(Splat2D {
        gaussian_index: index,
        mu2d,
        cov2d,
        conic,
        depth: z,
        alpha_base,
        color: g.rgb(),
        radius,
        cam_pos: t,
        jacobian: jac,
        cov3d,
        unit_q,
    })
}

/// Projects every Gaussian and returns visible splats sorted front to back,
/// ties broken by Gaussian index.
pub fn project_scene(scene: &GaussianScene, cam: &Camera) -> Vec<Splat2D> {
    let mut splats: Vec<Splat2D> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, i, cam))
        .filter(|s| s.radius > 0.0)
        .collect();
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.gaussian_index.cmp(&b.gaussian_index))
    });
    splats
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn camera() -> Camera {
        Camera::look_at(
            64,
            64,
            80.0,
            Vector3::new(0.0, 0.0, -5.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn isotropic_on_axis_follows_similar_triangles() {
        let cam = camera();
        let sigma = 0.1;
        let g = Gaussian3D::from_display(
            Vector3::zeros(),
            Quat::IDENTITY,
            Vector3::repeat(sigma),
            0.5,
            Vector3::repeat(0.5),
        );
        let s = project_gaussian(&g, 0, &cam).unwrap();
        let expect = (80.0 * sigma / 5.0f64).powi(2) + DILATION;
        assert!((s.cov2d - Matrix2::identity() * expect).norm() < 1e-12);
        assert!((s.mu2d - Vector2::new(32.0, 32.0)).norm() < 1e-12);
        assert_eq!(s.depth, 5.0);
    }

    #[test]
    fn behind_near_is_culled() {
        let cam = camera();
        let g = Gaussian3D::from_display(
            Vector3::new(0.0, 0.0, -5.0 + 0.005),
            Quat::IDENTITY,
            Vector3::repeat(0.1),
            0.5,
            Vector3::repeat(0.5),
        );
        assert!(project_gaussian(&g, 0, &cam).is_none());
        let g = Gaussian3D::from_display(
            Vector3::new(0.0, 0.0, -8.0),
            Quat::IDENTITY,
            Vector3::repeat(0.1),
            0.5,
            Vector3::repeat(0.5),
        );
        assert!(project_gaussian(&g, 0, &cam).is_none());
    }

    /// Monte-Carlo oracle: push samples of the 3D Gaussian through the exact
    /// perspective map and compare the empirical screen covariance.
    #[test]
    fn generic_pose_matches_monte_carlo_projection() {
        let cam = Camera::look_at(
            64,
            64,
            70.0,
            Vector3::new(1.5, -1.0, -4.0),
            Vector3::new(0.2, 0.1, 0.3),
            Vector3::new(0.0, -1.0, 0.0),
        )
        .unwrap();
        let q = Quat::new(0.8, 0.3, -0.4, 0.2).normalize().unwrap();
        let g = Gaussian3D::from_display(
            Vector3::new(0.3, -0.2, 0.4),
            q,
            Vector3::new(0.08, 0.03, 0.05),
            0.8,
            Vector3::repeat(0.5),
        );
        let s = project_gaussian(&g, 0, &cam).unwrap();
        let chol = g.covariance().cholesky().unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            let e = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let p = cam.to_camera(&(g.mu + chol * e));
            pts.push(Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy));
        }
        let mean = pts.iter().sum::<Vector2<f64>>() / n as f64;
        let cov = pts
            .iter()
            .map(|p| (p - mean) * (p - mean).transpose())
            .sum::<Matrix2<f64>>()
            / (n - 1) as f64;
        let analytic = s.cov2d - Matrix2::identity() * DILATION;
        let rel = (cov - analytic).norm() / analytic.norm();
        assert!(rel < 0.02, "relative covariance error {rel}");
    }
}

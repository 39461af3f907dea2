use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::quat::normalize_vjp;
use crate::render::project::Splat2D;
use crate::render::raster::{pixel_center, RenderOutput};
use crate::scene::GaussianScene;

/// Gradient of a scalar loss with respect to one Gaussian's current fields.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GaussianGrad {
    pub mu: Vector3<f64>,
    pub q: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

impl GaussianGrad {
    pub fn add(&mut self, o: &GaussianGrad) {
        self.mu += o.mu;
        self.q += o.q;
        self.log_scale += o.log_scale;
        self.opacity_logit += o.opacity_logit;
        self.color += o.color;
    }

    pub fn scale(&mut self, s: f64) {
        self.mu *= s;
        self.q *= s;
        self.log_scale *= s;
        self.opacity_logit *= s;
        self.color *= s;
    }

    pub fn max_abs(&self) -> f64 {
        self.mu
            .amax()
            .max(self.q.amax())
            .max(self.log_scale.amax())
            .max(self.opacity_logit.abs())
            .max(self.color.amax())
    }
}

/// Screen-space gradient on one splat, before chaining to 3D.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplatGrad {
    pub mu2d: Vector2<f64>,
    /// Gradient on the inverse covariance (full-matrix convention).
    pub conic: Matrix2<f64>,
    /// Gradient on the covariance itself (full-matrix convention).
    pub cov2d: Matrix2<f64>,
    /// Gradient on the activated opacity.
    pub opacity: f64,
    /// Gradient on the activated color.
    pub color: Vector3<f64>,
}

impl SplatGrad {
    pub fn add(&mut self, o: &SplatGrad) {
        self.mu2d += o.mu2d;
        self.conic += o.conic;
        self.cov2d += o.cov2d;
        self.opacity += o.opacity;
        self.color += o.color;
    }
}

/// Backpropagates a per-pixel image gradient (`H·W·3`, interleaved RGB)
/// through the alpha blend to splat space.
pub fn splat_grads_from_image(out: &RenderOutput, d_image: &[f64]) -> Result<Vec<SplatGrad>> {
    if d_image.len() != out.width * out.height * 3 {
        return Err(Error::DimensionMismatch(format!(
            "image gradient has {} values, render is {}x{}x3",
            d_image.len(),
            out.width,
            out.height
        )));
    }
    let mut grads = vec![SplatGrad::default(); out.splats.len()];
    let bg = out.background;
    for y in 0..out.height {
        for x in 0..out.width {
            let p = y * out.width + x;
            let g = Vector3::new(d_image[3 * p], d_image[3 * p + 1], d_image[3 * p + 2]);
            if g == Vector3::zeros() {
                continue;
            }
            let frags = out.fragments_of_pixel(p);
            let center = pixel_center(x, y);
            // color seen behind fragment k, normalized by the transmittance after it
            let mut behind = bg;
            for f in frags.iter().rev() {
                let s = &out.splats[f.splat as usize];
                let sg = &mut grads[f.splat as usize];
                sg.color += g * f.blend_weight;
                let d_alpha = g.dot(&(s.color - behind)) * f.transmittance;
                let gauss = f.alpha / s.alpha_base;
                sg.opacity += d_alpha * gauss;
                let d_power = d_alpha * f.alpha;
                let d = center - s.mu2d;
                sg.mu2d += s.conic * d * d_power;
                sg.conic += d * d.transpose() * (-0.5 * d_power);
                behind = s.color * f.alpha + behind * (1.0 - f.alpha);
            }
        }
    }
    Ok(grads)
}

/// Chains screen-space splat gradients through projection, covariance
/// assembly, quaternion normalization, and the activations.
pub fn chain_splat_grads(
    scene: &GaussianScene,
    cam: &Camera,
    splats: &[Splat2D],
    splat_grads: &[SplatGrad],
) -> Vec<GaussianGrad> {
    let mut out = vec![GaussianGrad::default(); scene.gaussians.len()];
    let w = cam.rotation();
    for (s, sg) in splats.iter().zip(splat_grads) {
        let gauss = &scene.gaussians[s.gaussian_index];
        let gg = &mut out[s.gaussian_index];

        let c = s.color;
        gg.color += sg.color.component_mul(&c.component_mul(&c.map(|v| 1.0 - v)));
        gg.opacity_logit += sg.opacity * s.alpha_base * (1.0 - s.alpha_base);

        let conic_t = s.conic.transpose();
        let d_cov2d = sg.cov2d - conic_t * sg.conic * conic_t;
        if d_cov2d == Matrix2::zeros() && sg.mu2d == Vector2::zeros() {
            continue;
        }
        let tw = s.jacobian * w;
        let d_cov3d: Matrix3<f64> = tw.transpose() * d_cov2d * tw;
        let d_tw = (d_cov2d + d_cov2d.transpose()) * tw * s.cov3d;
        let d_jac = d_tw * w.transpose();

        let (x, y, z) = (s.cam_pos.x, s.cam_pos.y, s.cam_pos.z);
        let (fx, fy) = (cam.fx, cam.fy);
        let mut d_t = s.jacobian.transpose() * sg.mu2d;
        let z2 = z * z;
        let z3 = z2 * z;
        d_t.x += d_jac[(0, 2)] * (-fx / z2);
        d_t.y += d_jac[(1, 2)] * (-fy / z2);
        d_t.z += d_jac[(0, 0)] * (-fx / z2)
            + d_jac[(0, 2)] * (2.0 * fx * x / z3)
            + d_jac[(1, 1)] * (-fy / z2)
            + d_jac[(1, 2)] * (2.0 * fy * y / z3);
        gg.mu += w.transpose() * d_t;

        let (d_unit_q, d_ls) = crate::scene::covariance_vjp(s.unit_q, &gauss.log_scale, &d_cov3d);
        gg.log_scale += d_ls;
        gg.q += normalize_vjp(&gauss.q.to_vec4(), &d_unit_q);
    }
    out
}

/// Gradients of a loss on the rendered image with respect to every Gaussian.
/// `d_image` is `dL/dI` in interleaved RGB order.
pub fn render_backward_color(
    scene: &GaussianScene,
    cam: &Camera,
    out: &RenderOutput,
    d_image: &[f64],
) -> Result<Vec<GaussianGrad>> {
    let sg = splat_grads_from_image(out, d_image)?;
    Ok(chain_splat_grads(scene, cam, &out.splats, &sg))
}

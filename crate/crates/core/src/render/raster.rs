use nalgebra::{Vector2, Vector3};

use crate::camera::Camera;
use crate::image::Image;
use crate::render::project::{project_scene, Splat2D};
use crate::scene::GaussianScene;

/// Fragments with alpha below this are skipped.
pub const ALPHA_FLOOR: f64 = 1.0 / 255.0;
/// Blending stops before transmittance would fall below this.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;

const BIN: usize = 16;

/// One splat's contribution to one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    /// Index into [`RenderOutput::splats`].
    pub splat: u32,
    pub gaussian_index: u32,
    pub alpha: f64,
    /// Transmittance in front of this fragment.
    pub transmittance: f64,
    /// `alpha · transmittance`.
    pub blend_weight: f64,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub image: Image,
    pub alpha_map: Vec<f64>,
    pub final_transmittance: Vec<f64>,
    pub splats: Vec<Splat2D>,
    pub background: Vector3<f64>,
    fragments: Vec<Fragment>,
    offsets: Vec<usize>,
}

impl RenderOutput {
    /// Front-to-back fragments of pixel `(x, y)`.
    pub fn fragments_at(&self, x: usize, y: usize) -> &[Fragment] {
        let p = y * self.width + x;
        &self.fragments[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn fragments_of_pixel(&self, p: usize) -> &[Fragment] {
        &self.fragments[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn fragment_count(&self) -> usize {
        self.fragments.len()
    }

    /// Per pixel, the ordered Gaussian indices contributing to it. Two renders
    /// with equal topology differ only smoothly in their parameters.
    pub fn topology(&self) -> Vec<Vec<u32>> {
        (0..self.width * self.height)
            .map(|p| self.fragments_of_pixel(p).iter().map(|f| f.gaussian_index).collect())
            .collect()
    }
}

pub(crate) fn pixel_center(x: usize, y: usize) -> Vector2<f64> {
    Vector2::new(x as f64 + 0.5, y as f64 + 0.5)
}

/// Renders the current state of `scene` from `cam`.
pub fn render_forward(scene: &GaussianScene, cam: &Camera) -> RenderOutput {
    let splats = project_scene(scene, cam);
    let (w, h) = (cam.width, cam.height);
    let bins_x = w.div_ceil(BIN);
    let bins_y = h.div_ceil(BIN);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); bins_x * bins_y];
    for (si, s) in splats.iter().enumerate() {
        let x0 = s.mu2d.x - s.radius;
        let x1 = s.mu2d.x + s.radius;
        let y0 = s.mu2d.y - s.radius;
        let y1 = s.mu2d.y + s.radius;
        if x1 < 0.0 || y1 < 0.0 || x0 > w as f64 || y0 > h as f64 {
            continue;
        }
        let bx0 = (x0.max(0.0) as usize / BIN).min(bins_x - 1);
        let bx1 = (x1.min(w as f64 - 1.0).max(0.0) as usize / BIN).min(bins_x - 1);
        let by0 = (y0.max(0.0) as usize / BIN).min(bins_y - 1);
        let by1 = (y1.min(h as f64 - 1.0).max(0.0) as usize / BIN).min(bins_y - 1);
        for by in by0..=by1 {
            for bx in bx0..=bx1 {
                bins[by * bins_x + bx].push(si as u32);
            }
        }
    }

    let bg = scene.background;
    let mut image = Image::new(w, h);
    let mut alpha_map = vec![0.0; w * h];
    let mut final_t = vec![1.0; w * h];
    let mut fragments = Vec::new();
    let mut offsets = Vec::with_capacity(w * h + 1);
    offsets.push(0);
    for y in 0..h {
        for x in 0..w {
            let p = pixel_center(x, y);
            let bin = &bins[(y / BIN) * bins_x + x / BIN];
            let mut t = 1.0;
            let mut color = Vector3::zeros();
            for &si in bin {
                let s = &splats[si as usize];
                let d = p - s.mu2d;
                let power = -0.5 * (d.transpose() * s.conic * d)[0];
                if power > 0.0 {
                    continue;
                }
                let alpha = s.alpha_base * power.exp();
                if alpha < ALPHA_FLOOR {
                    continue;
                }
                let next_t = t * (1.0 - alpha);
                if next_t < TRANSMITTANCE_CUTOFF {
                    break;
                }
                let weight = alpha * t;
                color += s.color * weight;
                fragments.push(Fragment {
                    splat: si,
                    gaussian_index: s.gaussian_index as u32,
                    alpha,
                    transmittance: t,
                    blend_weight: weight,
                });
                t = next_t;
            }
            let idx = y * w + x;
            image.set(x, y, color + bg * t);
            alpha_map[idx] = 1.0 - t;
            final_t[idx] = t;
            offsets.push(fragments.len());
        }
    }
    RenderOutput {
        width: w,
        height: h,
        image,
        alpha_map,
        final_transmittance: final_t,
        splats,
        background: bg,
        fragments,
        offsets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::Quat;
    use crate::scene::Gaussian3D;

    fn camera() -> Camera {
        Camera::look_at(
            32,
            32,
            40.0,
            Vector3::new(0.0, 0.0, -4.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
        )
        .unwrap()
    }

    /// World point whose projection is the center of pixel `(px, py)` at depth `z`.
    fn at_pixel(cam: &Camera, px: usize, py: usize, depth: f64) -> Vector3<f64> {
        let u = px as f64 + 0.5;
        let v = py as f64 + 0.5;
        Vector3::new((u - cam.cx) * depth / cam.fx, (v - cam.cy) * depth / cam.fy, depth - 4.0)
    }

    fn blob(mu: Vector3<f64>, opacity: f64, rgb: Vector3<f64>) -> Gaussian3D {
        Gaussian3D::from_display(mu, Quat::IDENTITY, Vector3::repeat(0.1), opacity, rgb)
    }

    #[test]
    fn single_gaussian_center_pixel() {
        let cam = camera();
        let bg = Vector3::new(0.1, 0.2, 0.3);
        let o = 0.6;
        let c = Vector3::new(0.9, 0.4, 0.2);
        let g = blob(at_pixel(&cam, 10, 12, 4.0), o, c);
        let scene = GaussianScene::new(vec![g.clone()], bg).unwrap();
        let out = render_forward(&scene, &cam);
        let expect = g.rgb() * g.opacity() + bg * (1.0 - g.opacity());
        assert!((out.image.get(10, 12) - expect).norm() < 1e-12);
        assert_eq!(out.image.get(0, 31), bg);
        assert_eq!(out.fragments_at(0, 31).len(), 0);
    }

    #[test]
    fn two_stacked_gaussians() {
        let cam = camera();
        let bg = Vector3::new(0.0, 0.5, 1.0);
        let front = blob(at_pixel(&cam, 16, 16, 4.0), 0.5, Vector3::new(1.0, 0.0, 0.0));
        let back = blob(at_pixel(&cam, 16, 16, 5.0), 0.7, Vector3::new(0.0, 1.0, 0.0));
        // insertion order must not matter
        let scene = GaussianScene::new(vec![back.clone(), front.clone()], bg).unwrap();
        let out = render_forward(&scene, &cam);
        let (a1, a2) = (front.opacity(), back.opacity());
        let expect = front.rgb() * a1 + back.rgb() * (1.0 - a1) * a2 + bg * (1.0 - a1) * (1.0 - a2);
        assert!((out.image.get(16, 16) - expect).norm() < 1e-12);
        let frags = out.fragments_at(16, 16);
        assert_eq!(frags.len(), 2);
        assert_eq!(frags[0].gaussian_index, 1);
    }

    #[test]
    fn blend_weights_partition_unity() {
        let cam = camera();
        let gs: Vec<_> = (0..12)
            .map(|i| {
                let f = i as f64;
                blob(
                    Vector3::new((f * 0.37).sin() * 0.8, (f * 0.91).cos() * 0.8, (f * 0.13).sin()),
                    0.3 + 0.05 * f,
                    Vector3::new(0.2, 0.5, 0.8),
                )
            })
            .collect();
        let scene = GaussianScene::new(gs, Vector3::zeros()).unwrap();
        let out = render_forward(&scene, &cam);
        for p in 0..32 * 32 {
            let sum: f64 = out.fragments_of_pixel(p).iter().map(|f| f.blend_weight).sum();
            assert!((sum + out.final_transmittance[p] - 1.0).abs() < 1e-6);
        }
    }
}

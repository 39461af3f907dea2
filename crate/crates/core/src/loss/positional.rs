//! Positional loss: tile-level transport displacements pushed onto the
//! per-pixel sample points of each splat, and back through the
//! reparameterization `p = μ' + Σ'^{1/2} ε` with `ε` held fixed.

use nalgebra::{Matrix2, Vector2};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::loss::sqrtm::{matrix_sqrt_2x2, sqrt_vjp};
use crate::loss::transport::{debiased_target_map, sinkhorn, tile_downsample, TransportConfig, TransportPlan};
use crate::render::{chain_splat_grads, GaussianGrad, RenderOutput, SplatGrad};
use crate::scene::GaussianScene;

/// Per-tile displacement `v̂(u) − u` in pixels, broadcast to member pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub width: usize,
    pub height: usize,
    pub tile: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub displacement: Vec<Vector2<f64>>,
}

impl DisplacementField {
    pub fn zeros(width: usize, height: usize, tile: usize) -> Self {
        let tiles_x = width.div_ceil(tile);
        let tiles_y = height.div_ceil(tile);
        DisplacementField {
            width,
            height,
            tile,
            tiles_x,
            tiles_y,
            displacement: vec![Vector2::zeros(); tiles_x * tiles_y],
        }
    }

    pub fn tile_of_pixel(&self, x: usize, y: usize) -> usize {
        (y / self.tile) * self.tiles_x + x / self.tile
    }

    /// Mean over pixels `u` of `½‖d(u)‖²`, in squared pixels.
    pub fn loss(&self) -> f64 {
        let mut total = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                total += 0.5 * self.displacement[self.tile_of_pixel(x, y)].norm_squared();
            }
        }
        total / (self.width * self.height) as f64
    }

    /// `dL/du` for a pixel in tile `t`.
    pub fn pixel_gradient(&self, t: usize) -> Vector2<f64> {
        -self.displacement[t] / (self.width * self.height) as f64
    }
}

#[derive(Debug, Clone)]
pub struct PositionalTerm {
    pub value: f64,
    pub field: DisplacementField,
    pub plan: TransportPlan,
    pub self_plan: TransportPlan,
}

/// Matches the tiles of `render` against `reference` and against itself; the
/// difference of the two barycentric maps is the per-tile displacement.
pub fn positional_loss(render: &Image, reference: &Image, cfg: &TransportConfig) -> Result<PositionalTerm> {
    if !render.same_dims(reference) {
        return Err(Error::DimensionMismatch(format!(
            "render {}x{} vs reference {}x{}",
            render.width, render.height, reference.width, reference.height
        )));
    }
    let scale = cfg.scale_for(render.width, render.height);
    let src = tile_downsample(render, cfg.tile)?;
    let dst = tile_downsample(reference, cfg.tile)?;
    let plan = sinkhorn(&src.tiles, &dst.tiles, cfg, scale)?;
    let self_plan = sinkhorn(&src.tiles, &src.tiles, cfg, scale)?;
    let targets = debiased_target_map(&plan, &self_plan);
    let mut field = DisplacementField::zeros(render.width, render.height, cfg.tile);
    for (k, (t, target)) in src.tiles.iter().zip(&targets).enumerate() {
        field.displacement[k] = target - t.position;
    }
    Ok(PositionalTerm {
        value: field.loss(),
        field,
        plan,
        self_plan,
    })
}

/// Per-splat square root data used by the reparameterized backward pass.
struct RootCache {
    sensitivity: nalgebra::Matrix4<f64>,
    root_inv: Matrix2<f64>,
}

/// Screen-space gradients of the positional loss. Each fragment `(i, w)` at
/// pixel `u` gives its sample point `w · dL/du`; that flows to `μ'` with
/// identity Jacobian and to `Σ'` through `d p / d Σ'^{1/2} = εᵀ`.
pub fn positional_splat_grads(
    out: &RenderOutput,
    field: &DisplacementField,
    mask: Option<&Mask>,
) -> Result<Vec<SplatGrad>> {
    if field.width != out.width || field.height != out.height {
        return Err(Error::DimensionMismatch(format!(
            "displacement field is {}x{}, render is {}x{}",
            field.width, field.height, out.width, out.height
        )));
    }
    let mut caches: Vec<Option<RootCache>> = Vec::with_capacity(out.splats.len());
    for s in &out.splats {
        caches.push(matrix_sqrt_2x2(&s.cov2d).ok().and_then(|(root, sensitivity)| {
            root.try_inverse().map(|root_inv| RootCache {
                sensitivity,
                root_inv,
            })
        }));
    }
    let mut d_root = vec![Matrix2::<f64>::zeros(); out.splats.len()];
    let mut grads = vec![SplatGrad::default(); out.splats.len()];
    for y in 0..out.height {
        for x in 0..out.width {
            let t = field.tile_of_pixel(x, y);
            let weight = mask.map_or(1.0, |m| m.get(x, y));
            let du = field.pixel_gradient(t) * weight;
            if du == Vector2::zeros() {
                continue;
            }
            let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            for f in out.fragments_at(x, y) {
                let si = f.splat as usize;
                let Some(cache) = &caches[si] else { continue };
                let gp = du * f.blend_weight;
                grads[si].mu2d += gp;
                let eps = cache.root_inv * (p - out.splats[si].mu2d);
                d_root[si] += gp * eps.transpose();
            }
        }
    }
    for ((g, dr), cache) in grads.iter_mut().zip(&d_root).zip(&caches) {
        if let Some(c) = cache {
            g.cov2d += sqrt_vjp(&c.sensitivity, dr);
        }
    }
    Ok(grads)
}

/// Positional-loss gradients on every Gaussian's `μ`, `q` and log-scales.
pub fn positional_backward(
    scene: &GaussianScene,
    cam: &Camera,
    out: &RenderOutput,
    field: &DisplacementField,
    mask: Option<&Mask>,
) -> Result<Vec<GaussianGrad>> {
    let sg = positional_splat_grads(out, field, mask)?;
    Ok(chain_splat_grads(scene, cam, &out.splats, &sg))
}

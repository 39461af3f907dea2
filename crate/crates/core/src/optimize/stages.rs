use nalgebra::{Vector3, Vector4};

use super::adam::{adam_step, cosine_lr, renormalize_quats, AdamState};
use super::config::{CoarseConfig, FineConfig};
use super::record::{LogRecord, LossBreakdown, LossWeights, Stage};
use crate::camera::Camera;
use crate::deform::{lbs_apply, lbs_backward, AnchorSet};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::loss::{abs_grad, photometric_loss, positional_backward, positional_loss, psnr, TransportConfig};
use crate::quat::{normalize_vjp, unit_or_identity, Quat};
use crate::regularize::{
    arap_loss, distance_loss, mask_l1, mask_reset, rotation_loss, NodeKind, RigidityGraph,
};
use crate::render::{render_backward_color, render_forward, GaussianGrad, RenderOutput};
use crate::scene::{sigmoid, GaussianScene};

/// What a stage fits against: one reference view, optionally restricted to
/// a region of interest.
#[derive(Clone, Copy, Debug)]
pub struct Target<'a> {
    pub reference: &'a Image,
    pub camera: &'a Camera,
    pub mask: Option<&'a Mask>,
}

impl<'a> Target<'a> {
    pub fn new(reference: &'a Image, camera: &'a Camera) -> Self {
        Self {
            reference,
            camera,
            mask: None,
        }
    }

    pub fn with_mask(mut self, mask: Option<&'a Mask>) -> Self {
        self.mask = mask;
        self
    }

    fn check(&self) -> Result<()> {
        self.camera.validate()?;
        self.reference
            .ensure_dims(self.camera.width, self.camera.height, "reference image")?;
        if let Some(m) = self.mask {
            if m.width != self.camera.width || m.height != self.camera.height {
                return Err(Error::DimensionMismatch(format!(
                    "mask is {}x{}, camera is {}x{}",
                    m.width, m.height, self.camera.width, self.camera.height
                )));
            }
        }
        Ok(())
    }
}

struct MatchTerm {
    l1: f64,
    dssim: f64,
    positional: f64,
    psnr: f64,
    grads: Vec<GaussianGrad>,
}

fn match_term(
    scene: &GaussianScene,
    target: &Target,
    lambda_l1: f64,
    lambda_ssim: f64,
    lambda_pos: Option<f64>,
    transport: &TransportConfig,
) -> Result<(MatchTerm, RenderOutput)> {
    let out = render_forward(scene, target.camera);
    let photo = photometric_loss(&out.image, target.reference, lambda_l1, lambda_ssim, target.mask)?;
    let mut grads = render_backward_color(scene, target.camera, &out, &photo.grad)?;
    let mut positional = 0.0;
    if let Some(w) = lambda_pos {
        let term = positional_loss(&out.image, target.reference, transport)?;
        positional = term.value;
        if w > 0.0 {
            let pg = positional_backward(scene, target.camera, &out, &term.field, target.mask)?;
            for (g, p) in grads.iter_mut().zip(&pg) {
                let mut p = *p;
                p.scale(w);
                g.add(&p);
            }
        }
    }
    let psnr = psnr(&out.image, target.reference)?;
    Ok((
        MatchTerm {
            l1: photo.l1,
            dssim: photo.dssim,
            positional,
            psnr,
            grads,
        },
        out,
    ))
}

fn flatten3(v: &[Vector3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|x| [x.x, x.y, x.z]).collect()
}

fn flatten4(v: &[Vector4<f64>]) -> Vec<f64> {
    v.iter().flat_map(|x| [x[0], x[1], x[2], x[3]]).collect()
}

fn masks_flat(graph: &RigidityGraph) -> Vec<f64> {
    let mut out = graph.mask_arap.clone();
    out.extend_from_slice(&graph.mask_rot);
    out.extend_from_slice(&graph.mask_dist);
    out
}

fn write_masks(graph: &mut RigidityGraph, flat: &[f64]) {
    let e = graph.edge_count();
    graph.mask_arap.copy_from_slice(&flat[..e]);
    graph.mask_rot.copy_from_slice(&flat[e..2 * e]);
    graph.mask_dist.copy_from_slice(&flat[2 * e..]);
}

/// Regularizer values and gradients on node positions, node rotations (as
/// passed in) and the flat mask block.
struct RegOutcome {
    arap: f64,
    rotation: f64,
    distance: f64,
    mask: f64,
    d_mu: Vec<Vector3<f64>>,
    d_rot: Vec<Vector4<f64>>,
    d_masks: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn regularizers(
    graph: &RigidityGraph,
    mu: &[Vector3<f64>],
    rot: &[Quat],
    w_arap: f64,
    w_rot: f64,
    w_dist: f64,
    w_mask: f64,
) -> Result<RegOutcome> {
    let n = graph.node_count();
    let e = graph.edge_count();
    let mut d_mu = vec![Vector3::zeros(); n];
    let mut d_rot = vec![Vector4::zeros(); n];
    let mut d_masks = vec![0.0; 3 * e];
    let a = arap_loss(graph, mu, rot)?;
    let r = rotation_loss(graph, rot)?;
    let d = distance_loss(graph, mu)?;
    let m = mask_l1(graph);
    for i in 0..n {
        d_mu[i] = w_arap * a.d_mu[i] + w_dist * d.d_mu[i];
        d_rot[i] = w_arap * a.d_q[i] + w_rot * r.d_q[i];
    }
    for k in 0..e {
        d_masks[k] = w_arap * a.d_mask[k] + w_mask * m.d_arap[k];
        d_masks[e + k] = w_rot * r.d_mask[k] + w_mask * m.d_rot[k];
        d_masks[2 * e + k] = w_dist * d.d_mask[k] + w_mask * m.d_dist[k];
    }
    Ok(RegOutcome {
        arap: a.value,
        rotation: r.value,
        distance: d.value,
        mask: m.value,
        d_mu,
        d_rot,
        d_masks,
    })
}

fn reset_due(iteration: usize, period: usize) -> bool {
    period > 0 && (iteration + 1) % period == 0
}

pub struct CoarseOutcome {
    pub anchors: AnchorSet,
    pub graph: RigidityGraph,
    /// Scene with current fields set to the final skinned state.
    pub scene: GaussianScene,
    pub log: Vec<LogRecord>,
    /// Number of parameter updates performed.
    pub iterations: usize,
    /// Iteration at which `psnr_target` was reached, if it was.
    pub reached_target: Option<usize>,
    pub final_psnr: f64,
}

impl CoarseConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            l1: self.lambda_l1,
            ssim: self.lambda_ssim,
            positional: if self.positional { self.lambda_pos } else { 0.0 },
            arap: self.lambda_arap,
            rotation: self.lambda_rot,
            distance: self.lambda_dist,
            mask: self.lambda_mask,
            scale: 0.0,
            color: 0.0,
        }
    }
}

/// Rigidity graph over the rest anchors with fresh masks.
pub fn anchor_graph(anchors: &AnchorSet, cfg: &CoarseConfig) -> Result<RigidityGraph> {
    RigidityGraph::build(NodeKind::Anchors, &anchors.a_init, cfg.k_reg, cfg.gamma)
}

/// Optimizes anchor positions, anchor rotations and the anchor-graph masks.
/// Per-Gaussian parameters stay fixed; the scene only follows the anchors.
pub fn coarse_stage(
    scene: &GaussianScene,
    anchors: AnchorSet,
    graph: Option<RigidityGraph>,
    target: Target,
    cfg: &CoarseConfig,
    transport: &TransportConfig,
) -> Result<CoarseOutcome> {
    cfg.validate()?;
    transport.validate()?;
    target.check()?;
    let stage = Stage::Coarse;
    let mut anchors = anchors;
    let mut graph = match graph {
        Some(g) => g,
        None => anchor_graph(&anchors, cfg)?,
    };
    if graph.node_count() != anchors.len() {
        return Err(Error::DimensionMismatch(
            "rigidity graph does not match the anchor set".into(),
        ));
    }
    let weights = cfg.weights();
    let lambda_pos = cfg.positional.then_some(cfg.lambda_pos);
    let mut work = scene.clone();
    let na = anchors.len();
    let mut pos = flatten3(&anchors.a);
    let mut rot: Vec<f64> = anchors.r.iter().flat_map(|q| q.to_array()).collect();
    let mut masks = masks_flat(&graph);
    let mut adam_pos = AdamState::new(pos.len());
    let mut adam_rot = AdamState::new(rot.len());
    let mut adam_mask = AdamState::new(masks.len());
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut reached = None;
    let mut iterations = 0;

    for t in 0..cfg.iterations {
        let fail = |e: Error| e.in_stage(stage.name(), t);
        let lbs = lbs_apply(&anchors, &work).map_err(fail)?;
        lbs.write_to(&mut work);
        let (m, _) = match_term(&work, &target, cfg.lambda_l1, cfg.lambda_ssim, lambda_pos, transport)
            .map_err(fail)?;
        if let Some(goal) = cfg.psnr_target {
            if m.psnr >= goal {
                reached = Some(t);
                log.push(record(t, stage, &m, None, &weights));
                break;
            }
        }
        let d_mu: Vec<Vector3<f64>> = m.grads.iter().map(|g| g.mu).collect();
        let d_q: Vec<Vector4<f64>> = m.grads.iter().map(|g| g.q).collect();
        let mut grad = lbs_backward(&anchors, &work, &lbs, &d_mu, &d_q);

        let unit: Vec<Quat> = anchors.r.iter().map(|q| unit_or_identity(*q)).collect();
        let reg = regularizers(
            &graph,
            &anchors.a,
            &unit,
            cfg.lambda_arap,
            cfg.lambda_rot,
            cfg.lambda_dist,
            cfg.lambda_mask,
        )
        .map_err(fail)?;
        for j in 0..na {
            grad.a[j] += reg.d_mu[j];
            grad.r[j] += normalize_vjp(&anchors.r[j].to_vec4(), &reg.d_rot[j]);
        }
        log.push(record(t, stage, &m, Some(&reg), &weights));

        let lr_pos = cosine_lr(t, cfg.iterations, cfg.lr_position, cfg.lr_position_final);
        adam_step(&mut adam_pos, &mut pos, &flatten3(&grad.a), lr_pos, t);
        adam_step(&mut adam_rot, &mut rot, &flatten4(&grad.r), cfg.lr_rotation, t);
        adam_step(&mut adam_mask, &mut masks, &reg.d_masks, cfg.lr_mask, t);
        renormalize_quats(&mut rot);
        for j in 0..na {
            anchors.a[j] = Vector3::new(pos[3 * j], pos[3 * j + 1], pos[3 * j + 2]);
            anchors.r[j] = Quat::new(rot[4 * j], rot[4 * j + 1], rot[4 * j + 2], rot[4 * j + 3]);
        }
        write_masks(&mut graph, &masks);
        if reset_due(t, cfg.mask_reset_period) {
            mask_reset(&mut graph, cfg.mask_reset_eta).map_err(fail)?;
            masks = masks_flat(&graph);
        }
        iterations = t + 1;
    }

    let lbs = lbs_apply(&anchors, &work).map_err(|e| e.in_stage(stage.name(), iterations))?;
    lbs.write_to(&mut work);
    let final_psnr = psnr(&render_forward(&work, target.camera).image, target.reference)?;
    Ok(CoarseOutcome {
        anchors,
        graph,
        scene: work,
        log,
        iterations,
        reached_target: reached,
        final_psnr,
    })
}

fn record(
    iter: usize,
    stage: Stage,
    m: &MatchTerm,
    reg: Option<&RegOutcome>,
    weights: &LossWeights,
) -> LogRecord {
    let mut loss = LossBreakdown {
        l1: m.l1,
        dssim: m.dssim,
        positional: m.positional,
        ..Default::default()
    };
    if let Some(r) = reg {
        loss.arap = r.arap;
        loss.rotation = r.rotation;
        loss.distance = r.distance;
        loss.mask = r.mask;
    }
    loss.total = loss.weighted_sum(weights);
    LogRecord {
        iter,
        stage,
        loss,
        psnr: m.psnr,
    }
}

pub struct FineOutcome {
    pub scene: GaussianScene,
    pub graph: RigidityGraph,
    pub log: Vec<LogRecord>,
    pub iterations: usize,
    pub reached_target: Option<usize>,
    pub final_psnr: f64,
}

impl FineConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            l1: self.lambda_l1,
            ssim: self.lambda_ssim,
            positional: if self.positional { self.lambda_pos } else { 0.0 },
            arap: self.lambda_arap,
            rotation: self.lambda_rot,
            distance: self.lambda_dist,
            mask: self.lambda_mask,
            scale: if self.mode.uses_scale() { self.lambda_scale } else { 0.0 },
            color: if self.mode.uses_color() { self.lambda_color } else { 0.0 },
        }
    }
}

/// `Σ |exp(s̄)/exp(s) − 1|` over all axes and its gradient on `s̄`.
pub fn scale_regularizer(scene: &GaussianScene) -> (f64, Vec<Vector3<f64>>) {
    let mut value = 0.0;
    let grads = scene
        .gaussians
        .iter()
        .map(|g| {
            let ratio = (g.log_scale - g.log_scale_init).map(f64::exp);
            value += ratio.iter().map(|r| (r - 1.0).abs()).sum::<f64>();
            ratio.map(|r| abs_grad(r - 1.0) * r)
        })
        .collect();
    (value, grads)
}

/// `Σ |σ(c̄)/σ(c) − 1|` over all channels and its gradient on `c̄`.
pub fn color_regularizer(scene: &GaussianScene) -> (f64, Vec<Vector3<f64>>) {
    let mut value = 0.0;
    let grads = scene
        .gaussians
        .iter()
        .map(|g| {
            Vector3::from_fn(|k, _| {
                let s = sigmoid(g.color[k]);
                let s0 = sigmoid(g.color_init[k]);
                let ratio = s / s0;
                value += (ratio - 1.0).abs();
                abs_grad(ratio - 1.0) * s * (1.0 - s) / s0
            })
        })
        .collect();
    (value, grads)
}

/// Rigidity graph over the rest Gaussian centers with fresh masks.
pub fn gaussian_graph(scene: &GaussianScene, cfg: &FineConfig) -> Result<RigidityGraph> {
    let rest: Vec<Vector3<f64>> = scene.gaussians.iter().map(|g| g.mu_init).collect();
    RigidityGraph::build(NodeKind::Gaussians, &rest, cfg.k_reg, cfg.gamma)
}

struct FineParams {
    mu: Vec<f64>,
    q: Vec<f64>,
    log_scale: Vec<f64>,
    opacity: Vec<f64>,
    color: Vec<f64>,
}

impl FineParams {
    fn gather(scene: &GaussianScene) -> Self {
        let g = &scene.gaussians;
        Self {
            mu: g.iter().flat_map(|g| [g.mu.x, g.mu.y, g.mu.z]).collect(),
            q: g.iter().flat_map(|g| g.q.to_array()).collect(),
            log_scale: g.iter().flat_map(|g| g.log_scale.iter().copied().collect::<Vec<_>>()).collect(),
            opacity: g.iter().map(|g| g.opacity_logit).collect(),
            color: g.iter().flat_map(|g| g.color.iter().copied().collect::<Vec<_>>()).collect(),
        }
    }

    fn scatter(&self, scene: &mut GaussianScene) {
        for (i, g) in scene.gaussians.iter_mut().enumerate() {
            g.mu = Vector3::new(self.mu[3 * i], self.mu[3 * i + 1], self.mu[3 * i + 2]);
            g.q = Quat::new(self.q[4 * i], self.q[4 * i + 1], self.q[4 * i + 2], self.q[4 * i + 3]);
            g.log_scale = Vector3::new(
                self.log_scale[3 * i],
                self.log_scale[3 * i + 1],
                self.log_scale[3 * i + 2],
            );
            g.opacity_logit = self.opacity[i];
            g.color = Vector3::new(self.color[3 * i], self.color[3 * i + 1], self.color[3 * i + 2]);
        }
    }
}

/// Relative rotation `q̂ ⊗ q̂_init⁻¹` per Gaussian, before normalization.
fn relative_rotations(scene: &GaussianScene) -> Vec<Quat> {
    scene
        .gaussians
        .iter()
        .map(|g| unit_or_identity(g.q).hamilton(unit_or_identity(g.q_init).conj()))
        .collect()
}

/// Directly optimizes every Gaussian's center, rotation, scale, opacity and
/// color, regularized against the rest state.
pub fn fine_stage(
    scene: &GaussianScene,
    target: Target,
    cfg: &FineConfig,
    transport: &TransportConfig,
) -> Result<FineOutcome> {
    cfg.validate()?;
    transport.validate()?;
    target.check()?;
    let stage = Stage::Fine;
    let mut work = scene.clone();
    let mut graph = gaussian_graph(&work, cfg)?;
    let weights = cfg.weights();
    let lambda_pos = cfg.positional.then_some(cfg.lambda_pos);
    let extent = work.extent_radius();
    let n = work.len();

    let mut p = FineParams::gather(&work);
    let mut masks = masks_flat(&graph);
    let mut adam_mu = AdamState::new(p.mu.len());
    let mut adam_q = AdamState::new(p.q.len());
    let mut adam_s = AdamState::new(p.log_scale.len());
    let mut adam_o = AdamState::new(p.opacity.len());
    let mut adam_c = AdamState::new(p.color.len());
    let mut adam_m = AdamState::new(masks.len());
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut reached = None;
    let mut iterations = 0;

    for t in 0..cfg.iterations {
        let fail = |e: Error| e.in_stage(stage.name(), t);
        let (m, _) = match_term(&work, &target, cfg.lambda_l1, cfg.lambda_ssim, lambda_pos, transport)
            .map_err(fail)?;
        if let Some(goal) = cfg.psnr_target {
            if m.psnr >= goal {
                reached = Some(t);
                log.push(record(t, stage, &m, None, &weights));
                break;
            }
        }
        let mut grads = m.grads.clone();

        let rel_raw = relative_rotations(&work);
        let rel: Vec<Quat> = rel_raw.iter().map(|r| unit_or_identity(*r)).collect();
        let mu: Vec<Vector3<f64>> = work.gaussians.iter().map(|g| g.mu).collect();
        let reg = regularizers(
            &graph,
            &mu,
            &rel,
            cfg.lambda_arap,
            cfg.lambda_rot,
            cfg.lambda_dist,
            cfg.lambda_mask,
        )
        .map_err(fail)?;
        for (i, g) in work.gaussians.iter().enumerate() {
            grads[i].mu += reg.d_mu[i];
            let conj_init = unit_or_identity(g.q_init).conj();
            let d_rel = normalize_vjp(&rel_raw[i].to_vec4(), &reg.d_rot[i]);
            let d_unit = conj_init.right_matrix().transpose() * d_rel;
            grads[i].q += normalize_vjp(&g.q.to_vec4(), &d_unit);
        }
        let (scale_value, scale_grad) = scale_regularizer(&work);
        let (color_value, color_grad) = color_regularizer(&work);
        for i in 0..n {
            grads[i].log_scale += weights.scale * scale_grad[i];
            grads[i].color += weights.color * color_grad[i];
        }
        let mut rec = record(t, stage, &m, Some(&reg), &weights);
        rec.loss.scale = scale_value;
        rec.loss.color = color_value;
        rec.loss.total = rec.loss.weighted_sum(&weights);
        log.push(rec);

        let lr_mu = extent * cosine_lr(t, cfg.iterations, cfg.lr_means, cfg.lr_means_final);
        let g_mu: Vec<f64> = grads.iter().flat_map(|g| [g.mu.x, g.mu.y, g.mu.z]).collect();
        let g_q: Vec<f64> = grads.iter().flat_map(|g| [g.q[0], g.q[1], g.q[2], g.q[3]]).collect();
        let g_s: Vec<f64> = grads.iter().flat_map(|g| [g.log_scale.x, g.log_scale.y, g.log_scale.z]).collect();
        let g_o: Vec<f64> = grads.iter().map(|g| g.opacity_logit).collect();
        let g_c: Vec<f64> = grads.iter().flat_map(|g| [g.color.x, g.color.y, g.color.z]).collect();
        adam_step(&mut adam_mu, &mut p.mu, &g_mu, lr_mu, t);
        adam_step(&mut adam_q, &mut p.q, &g_q, cfg.lr_rotation, t);
        adam_step(&mut adam_s, &mut p.log_scale, &g_s, cfg.lr_scale, t);
        adam_step(&mut adam_o, &mut p.opacity, &g_o, cfg.lr_opacity, t);
        adam_step(&mut adam_c, &mut p.color, &g_c, cfg.lr_color, t);
        adam_step(&mut adam_m, &mut masks, &reg.d_masks, cfg.lr_mask, t);
        renormalize_quats(&mut p.q);
        p.scatter(&mut work);
        write_masks(&mut graph, &masks);
        if reset_due(t, cfg.mask_reset_period) {
            mask_reset(&mut graph, cfg.mask_reset_eta).map_err(fail)?;
            masks = masks_flat(&graph);
        }
        iterations = t + 1;
    }
    let final_psnr = psnr(&render_forward(&work, target.camera).image, target.reference)?;
    Ok(FineOutcome {
        scene: work,
        graph,
        log,
        iterations,
        reached_target: reached,
        final_psnr,
    })
}

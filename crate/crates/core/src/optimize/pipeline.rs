use serde::{Deserialize, Serialize};

use super::config::EditConfig;
use super::record::LogRecord;
use super::stages::{coarse_stage, fine_stage, CoarseOutcome, Target};
use crate::camera::Camera;
use crate::deform::{init_anchors, AnchorSet};
use crate::error::Result;
use crate::image::Image;
use crate::loss::{psnr, ssim};
use crate::regularize::RigidityGraph;
use crate::render::render_forward;
use crate::scene::GaussianScene;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

impl ViewMetrics {
    pub fn measure(scene: &GaussianScene, cam: &Camera, reference: &Image) -> Result<Self> {
        let img = render_forward(scene, cam).image;
        Ok(Self {
            psnr: psnr(&img, reference)?,
            ssim: ssim(&img, reference)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub initial: ViewMetrics,
    pub coarse: ViewMetrics,
    pub reference: ViewMetrics,
    pub novel: Vec<ViewMetrics>,
    pub coarse_iterations: usize,
    pub fine_iterations: usize,
    pub anchors: usize,
}

pub struct EditOutcome {
    pub scene: GaussianScene,
    pub coarse_scene: GaussianScene,
    pub anchors: AnchorSet,
    pub coarse_graph: RigidityGraph,
    pub fine_graph: Option<RigidityGraph>,
    pub log: Vec<LogRecord>,
    pub report: EditReport,
}

/// Anchors, coarse stage, fine stage, then metrics on the reference view and
/// on any held-out views.
pub fn run_edit(
    scene: &GaussianScene,
    target: Target,
    cfg: &EditConfig,
    novel: &[(Camera, Image)],
) -> Result<EditOutcome> {
    cfg.validate()?;
    scene.validate()?;
    let initial = ViewMetrics::measure(scene, target.camera, target.reference)?;
    let anchors = init_anchors(scene, &cfg.anchors)?;
    let coarse = coarse_stage(scene, anchors, None, target, &cfg.coarse, &cfg.transport)?;
    let coarse_metrics = ViewMetrics::measure(&coarse.scene, target.camera, target.reference)?;
    let mut log = coarse.log;
    let (final_scene, fine_graph, fine_iterations) = if cfg.skip_fine {
        (coarse.scene.clone(), None, 0)
    } else {
        let fine = fine_stage(&coarse.scene, target, &cfg.fine, &cfg.transport)?;
        log.extend(fine.log);
        (fine.scene, Some(fine.graph), fine.iterations)
    };
    let reference = ViewMetrics::measure(&final_scene, target.camera, target.reference)?;
    let novel = novel
        .iter()
        .map(|(cam, img)| ViewMetrics::measure(&final_scene, cam, img))
        .collect::<Result<Vec<_>>>()?;
    let report = EditReport {
        initial,
        coarse: coarse_metrics,
        reference,
        novel,
        coarse_iterations: coarse.iterations,
        fine_iterations,
        anchors: coarse.anchors.len(),
    };
    Ok(EditOutcome {
        scene: final_scene,
        coarse_scene: coarse.scene,
        anchors: coarse.anchors,
        coarse_graph: coarse.graph,
        fine_graph,
        log,
        report,
    })
}

pub struct TrackFrame {
    pub anchors: AnchorSet,
    pub scene: GaussianScene,
    pub log: Vec<LogRecord>,
    pub iterations: usize,
    pub reached_target: Option<usize>,
    pub psnr: f64,
}

impl From<CoarseOutcome> for TrackFrame {
    fn from(c: CoarseOutcome) -> Self {
        Self {
            anchors: c.anchors,
            scene: c.scene,
            log: c.log,
            iterations: c.iterations,
            reached_target: c.reached_target,
            psnr: c.final_psnr,
        }
    }
}

/// Coarse-only fitting of each frame in order. With `warm_start`, frame `k`
/// starts from the anchors and masks of frame `k − 1` (with fresh optimizer
/// moments); otherwise every frame starts from the rest anchors.
pub fn run_track(
    scene: &GaussianScene,
    frames: &[Image],
    cam: &Camera,
    cfg: &EditConfig,
    warm_start: bool,
) -> Result<Vec<TrackFrame>> {
    cfg.validate()?;
    scene.validate()?;
    let rest = init_anchors(scene, &cfg.anchors)?;
    let mut out: Vec<TrackFrame> = Vec::with_capacity(frames.len());
    let mut carry: Option<(AnchorSet, RigidityGraph)> = None;
    for frame in frames {
        let (anchors, graph) = match carry.take() {
            Some((a, g)) if warm_start => (a, Some(g)),
            _ => (rest.clone(), None),
        };
        let c = coarse_stage(scene, anchors, graph, Target::new(frame, cam), &cfg.coarse, &cfg.transport)?;
        carry = Some((c.anchors.clone(), c.graph.clone()));
        out.push(c.into());
    }
    Ok(out)
}

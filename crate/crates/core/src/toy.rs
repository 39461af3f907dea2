//! Synthetic scenes with known ground-truth deformations.

use std::path::Path;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::camera::Camera;
use crate::deform::AnchorConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::TransportConfig;
use crate::optimize::{CoarseConfig, EditConfig, FineConfig};
use crate::ply::save_scene;
use crate::quat::Quat;
use crate::render::render_forward;
use crate::scene::{Gaussian3D, GaussianScene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyKind {
    TranslateCluster,
    BendArm,
    StretchBar,
    SwapObjects,
}

impl ToyKind {
    pub fn name(self) -> &'static str {
        match self {
            ToyKind::TranslateCluster => "translate-cluster",
            ToyKind::BendArm => "bend-arm",
            ToyKind::StretchBar => "stretch-bar",
            ToyKind::SwapObjects => "swap-objects",
        }
    }
}

impl std::str::FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate-cluster" => Ok(ToyKind::TranslateCluster),
            "bend-arm" => Ok(ToyKind::BendArm),
            "stretch-bar" => Ok(ToyKind::StretchBar),
            "swap-objects" => Ok(ToyKind::SwapObjects),
            other => Err(Error::Config(format!("unknown toy kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub kind: ToyKind,
    pub gaussians: usize,
    /// Displacement length for translate-cluster, bend angle in degrees for
    /// bend-arm, stretch factor minus one for stretch-bar; ignored by
    /// swap-objects.
    pub magnitude: f64,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Number of video frames stepping evenly from rest to the full
    /// transform. Frame `k` applies fraction `(k + 1) / frames`, so the last
    /// frame is the reference and no frame repeats the rest pose. 0 writes
    /// no frames.
    pub frames: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            kind: ToyKind::TranslateCluster,
            gaussians: 120,
            magnitude: 1.5,
            seed: 7,
            width: 64,
            height: 64,
            frames: 0,
        }
    }
}

impl ToySpec {
    pub fn new(kind: ToyKind) -> Self {
        let magnitude = match kind {
            ToyKind::TranslateCluster => 1.5,
            ToyKind::BendArm => 30.0,
            ToyKind::StretchBar => 0.5,
            ToyKind::SwapObjects => 0.0,
        };
        Self {
            kind,
            magnitude,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub per_gaussian_targets: Vec<[f64; 3]>,
    pub transform_kind: String,
    pub params: serde_json::Value,
}

/// Everything a toy produces, in memory.
#[derive(Clone, Debug)]
pub struct ToyScene {
    pub spec: ToySpec,
    pub scene: GaussianScene,
    pub target: GaussianScene,
    pub camera: Camera,
    pub novel_camera: Camera,
    pub reference: Image,
    pub novel_reference: Image,
    pub oracle: Oracle,
    /// Per-frame target scenes and renders when `spec.frames > 0`.
    pub frame_targets: Vec<Vec<[f64; 3]>>,
    pub frames: Vec<Image>,
}

/// Rigid or piecewise-rigid map from rest centers to target centers.
enum Transform {
    Translate(Vector3<f64>),
    Bend {
        joint: Vector3<f64>,
        angle: f64,
    },
    Stretch(Vector3<f64>),
    Swap {
        offsets: [Vector3<f64>; 2],
        split: f64,
    },
}

impl Transform {
    /// Transform with every motion parameter scaled by `t ∈ [0, 1]`.
    fn partial(&self, t: f64) -> Transform {
        match self {
            Transform::Translate(d) => Transform::Translate(d * t),
            Transform::Bend { joint, angle } => Transform::Bend {
                joint: *joint,
                angle: angle * t,
            },
            Transform::Stretch(s) => Transform::Stretch(Vector3::repeat(1.0) + (s - Vector3::repeat(1.0)) * t),
            Transform::Swap { offsets, split } => Transform::Swap {
                offsets: [offsets[0] * t, offsets[1] * t],
                split: *split,
            },
        }
    }

    fn apply(&self, g: &Gaussian3D) -> Gaussian3D {
        let mut out = g.clone();
        match self {
            Transform::Translate(d) => out.mu = g.mu + d,
            Transform::Bend { joint, angle } => {
                if g.mu.x > joint.x {
                    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), *angle);
                    out.mu = joint + rot * (g.mu - joint);
                    out.q = Quat::from_axis_angle(&Vector3::z(), *angle).mul(g.q);
                }
            }
            Transform::Stretch(s) => {
                out.mu = g.mu.component_mul(s);
                out.log_scale = g.log_scale + s.map(f64::ln);
            }
            Transform::Swap { offsets, split } => {
                out.mu = g.mu + if g.mu.x < *split { offsets[0] } else { offsets[1] };
            }
        }
        out.snapshot_init();
        out
    }

    fn apply_scene(&self, scene: &GaussianScene) -> Result<GaussianScene> {
        GaussianScene::new(scene.gaussians.iter().map(|g| self.apply(g)).collect(), scene.background)
    }
}

fn ball_point(rng: &mut ChaCha8Rng, radius: f64) -> Vector3<f64> {
    loop {
        let p = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if p.norm_squared() <= 1.0 {
            return p * radius;
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Quat {
    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0) + 1e-3,
    ));
    Quat::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI))
}

fn blob(
    rng: &mut ChaCha8Rng,
    center: Vector3<f64>,
    radius: f64,
    count: usize,
    base: Vector3<f64>,
) -> Vec<Gaussian3D> {
    let jitter = Normal::new(0.0, 0.06).expect("valid normal");
    (0..count)
        .map(|_| {
            let mu = center + ball_point(rng, radius);
            let scales = Vector3::new(
                rng.random_range(0.045..0.08),
                rng.random_range(0.045..0.08),
                rng.random_range(0.045..0.08),
            );
            let rgb = base.map(|c| (c + jitter.sample(rng)).clamp(0.05, 0.95));
            Gaussian3D::from_display(mu, random_rotation(rng), scales, 0.85, rgb)
        })
        .collect()
}

/// Arm along x from `-length` to `length`; color shades along the arm.
fn arm(rng: &mut ChaCha8Rng, length: f64, half_width: f64, count: usize) -> Vec<Gaussian3D> {
    let jitter = Normal::new(0.0, 0.03).expect("valid normal");
    (0..count)
        .map(|i| {
            let u = (i as f64 + 0.5) / count as f64;
            let x = -length + 2.0 * length * u + jitter.sample(rng) * 0.3;
            let y = rng.random_range(-half_width..half_width);
            let z = rng.random_range(-half_width..half_width) * 0.5;
            let s = u;
            let rgb = Vector3::new(0.15 + 0.75 * s, 0.35 + 0.3 * (1.0 - s), 0.9 - 0.7 * s)
                .map(|c| (c + jitter.sample(rng)).clamp(0.05, 0.95));
            let scales = Vector3::new(
                rng.random_range(0.05..0.08),
                rng.random_range(0.04..0.06),
                rng.random_range(0.04..0.06),
            );
            let q = Quat::from_axis_angle(&Vector3::z(), rng.random_range(-0.3..0.3));
            Gaussian3D::from_display(Vector3::new(x, y, z), q, scales, 0.85, rgb)
        })
        .collect()
}

pub fn toy_camera(width: usize, height: usize) -> Result<Camera> {
    Camera::look_at(
        width,
        height,
        width as f64,
        Vector3::new(0.0, 0.0, -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
    )
}

pub fn toy_novel_camera(width: usize, height: usize) -> Result<Camera> {
    let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), 35f64.to_radians());
    let pitch = Rotation3::from_axis_angle(&Vector3::x_axis(), -20f64.to_radians());
    let eye = pitch * yaw * Vector3::new(0.0, 0.0, -4.0);
    Camera::look_at(width, height, width as f64, eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0))
}

pub fn gen_toy_scene(spec: &ToySpec) -> Result<ToyScene> {
    if spec.gaussians == 0 {
        return Err(Error::EmptyScene);
    }
    if spec.width < 8 || spec.height < 8 {
        return Err(Error::Config("toy images must be at least 8x8".into()));
    }
    if !spec.magnitude.is_finite() {
        return Err(Error::Config("toy magnitude must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.gaussians;
    let (gaussians, transform, params) = match spec.kind {
        ToyKind::TranslateCluster => {
            let dir = Vector3::new(1.0, 0.4, 0.0).normalize();
            let d = dir * spec.magnitude;
            let start = -d / 2.0;
            let radius = 0.25;
            let gs = blob(&mut rng, start, radius, n, Vector3::new(0.9, 0.55, 0.2));
            let params = json!({
                "displacement": [d.x, d.y, d.z],
                "cluster_center": [start.x, start.y, start.z],
                "cluster_radius": radius,
            });
            (gs, Transform::Translate(d), params)
        }
        ToyKind::BendArm => {
            let length = 0.8;
            let angle = spec.magnitude.to_radians();
            let gs = arm(&mut rng, length, 0.12, n);
            let params = json!({
                "joint": [0.0, 0.0, 0.0],
                "axis": [0.0, 0.0, 1.0],
                "angle_deg": spec.magnitude,
                "arm_length": 2.0 * length,
                "distal_side": "x > joint",
            });
            (gs, Transform::Bend { joint: Vector3::zeros(), angle }, params)
        }
        ToyKind::StretchBar => {
            let gs = arm(&mut rng, 0.6, 0.12, n);
            let s = Vector3::new(1.0 + spec.magnitude, 1.0 / (1.0 + 0.5 * spec.magnitude), 1.0);
            let params = json!({ "scale": [s.x, s.y, s.z] });
            (gs, Transform::Stretch(s), params)
        }
        ToyKind::SwapObjects => {
            let a = Vector3::new(-0.7, 0.0, 0.0);
            let b = Vector3::new(0.7, 0.0, 0.0);
            let mut gs = blob(&mut rng, a, 0.25, n / 2, Vector3::new(0.85, 0.25, 0.2));
            gs.extend(blob(&mut rng, b, 0.25, n - n / 2, Vector3::new(0.2, 0.4, 0.9)));
            let params = json!({ "centers": [[a.x, a.y, a.z], [b.x, b.y, b.z]] });
            (gs, Transform::Swap { offsets: [b - a, a - b], split: 0.0 }, params)
        }
    };
    let scene = GaussianScene::new(gaussians, Vector3::zeros())?;
    let target = transform.apply_scene(&scene)?;
    let camera = toy_camera(spec.width, spec.height)?;
    let novel_camera = toy_novel_camera(spec.width, spec.height)?;
    let reference = render_forward(&target, &camera).image.quantized();
    let novel_reference = render_forward(&target, &novel_camera).image.quantized();
    let oracle = Oracle {
        per_gaussian_targets: target.gaussians.iter().map(|g| g.mu.into()).collect(),
        transform_kind: spec.kind.name().to_string(),
        params,
    };
    let mut frames = Vec::new();
    let mut frame_targets = Vec::new();
    if spec.frames > 0 {
        for k in 0..spec.frames {
            let t = (k + 1) as f64 / spec.frames as f64;
            let s = transform.partial(t).apply_scene(&scene)?;
            frame_targets.push(s.gaussians.iter().map(|g| g.mu.into()).collect());
            frames.push(render_forward(&s, &camera).image.quantized());
        }
    }
    Ok(ToyScene {
        spec: spec.clone(),
        scene,
        target,
        camera,
        novel_camera,
        reference,
        novel_reference,
        oracle,
        frame_targets,
        frames,
    })
}

/// Settings sized for the toy scenes: few anchors, small tiles, short stages.
pub fn toy_config(spec: &ToySpec) -> EditConfig {
    let n_anchors = match spec.kind {
        ToyKind::TranslateCluster | ToyKind::SwapObjects => 12,
        ToyKind::BendArm | ToyKind::StretchBar => 16,
    };
    // articulated toys move a short way and drift in depth at the default rates
    let (lr_position, lr_rotation) = match spec.kind {
        ToyKind::TranslateCluster | ToyKind::SwapObjects => (0.02, 0.02),
        ToyKind::BendArm | ToyKind::StretchBar => (0.005, 0.005),
    };
    EditConfig {
        anchors: AnchorConfig {
            n_anchors,
            ..Default::default()
        },
        transport: TransportConfig {
            tile: 8,
            ..Default::default()
        },
        coarse: CoarseConfig {
            iterations: 2000,
            lr_position,
            lr_rotation,
            ..Default::default()
        },
        fine: FineConfig {
            iterations: 500,
            ..Default::default()
        },
        skip_fine: false,
    }
}

impl ToyScene {
    /// Writes scene.ply, camera.json, reference.png, oracle.json plus the
    /// target scene, a held-out view, a suggested config, and any frames.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_scene(&self.scene, dir.join("scene.ply"))?;
        save_scene(&self.target, dir.join("target.ply"))?;
        self.camera.save(dir.join("camera.json"))?;
        self.novel_camera.save(dir.join("novel_camera.json"))?;
        self.reference.save_png(dir.join("reference.png"))?;
        self.novel_reference.save_png(dir.join("novel_reference.png"))?;
        let oracle = dir.join("oracle.json");
        std::fs::write(&oracle, serde_json::to_string_pretty(&self.oracle)?)
            .map_err(|e| Error::io(&oracle, e))?;
        toy_config(&self.spec).save(&dir.join("config.json"))?;
        if !self.frames.is_empty() {
            let fdir = dir.join("frames");
            std::fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
            for (k, f) in self.frames.iter().enumerate() {
                f.save_png(fdir.join(format!("frame_{k:03}.png")))?;
            }
            let path = fdir.join("targets.json");
            std::fs::write(&path, serde_json::to_string(&self.frame_targets)?)
                .map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Pixels where the render is not background, using the alpha map.
pub fn foreground(scene: &GaussianScene, cam: &Camera, threshold: f64) -> Vec<bool> {
    render_forward(scene, cam)
        .alpha_map
        .iter()
        .map(|a| *a > threshold)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translate_has_no_overlap() {
        let toy = gen_toy_scene(&ToySpec::new(ToyKind::TranslateCluster)).unwrap();
        let a = foreground(&toy.scene, &toy.camera, 0.0);
        let b = foreground(&toy.target, &toy.camera, 0.0);
        assert!(a.iter().any(|x| *x) && b.iter().any(|x| *x));
        assert!(!a.iter().zip(&b).any(|(x, y)| *x && *y));
    }

    #[test]
    fn deterministic() {
        let spec = ToySpec {
            frames: 3,
            ..ToySpec::new(ToyKind::BendArm)
        };
        let a = gen_toy_scene(&spec).unwrap();
        let b = gen_toy_scene(&spec).unwrap();
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.reference, b.reference);
        assert_eq!(a.oracle, b.oracle);
        assert_eq!(a.frames.len(), 3);
        assert_eq!(a.frames[2], a.reference);
        assert_ne!(a.frames[0], render_forward(&a.scene, &a.camera).image.quantized());
    }

    #[test]
    fn bend_rotates_distal_segment() {
        let toy = gen_toy_scene(&ToySpec::new(ToyKind::BendArm)).unwrap();
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians());
        for (g, t) in toy.scene.gaussians.iter().zip(&toy.oracle.per_gaussian_targets) {
            let want = if g.mu.x > 0.0 { rot * g.mu } else { g.mu };
            assert!((Vector3::from(*t) - want).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_gaussians_rejected() {
        let spec = ToySpec {
            gaussians: 0,
            ..Default::default()
        };
        assert!(gen_toy_scene(&spec).is_err());
    }
}

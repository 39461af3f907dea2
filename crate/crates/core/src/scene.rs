//! Gaussian primitives and scenes.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat::Quat;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic Gaussian. The `*_init` fields hold the rest state from
/// the start of the edit session; optimizers only touch the current fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3D {
    pub mu_init: Vector3<f64>,
    pub mu: Vector3<f64>,
    pub q_init: Quat,
    pub q: Quat,
    pub log_scale_init: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// Color logits at rest; the displayed color is their sigmoid.
    pub color_init: Vector3<f64>,
    pub color: Vector3<f64>,
}

impl Gaussian3D {
    pub fn new(
        mu: Vector3<f64>,
        q: Quat,
        log_scale: Vector3<f64>,
        opacity_logit: f64,
        color_logits: Vector3<f64>,
    ) -> Self {
        Gaussian3D {
            mu_init: mu,
            mu,
            q_init: q,
            q,
            log_scale_init: log_scale,
            log_scale,
            opacity_logit,
            color_init: color_logits,
            color: color_logits,
        }
    }

    /// Convenience constructor from display-space values.
    pub fn from_display(
        mu: Vector3<f64>,
        q: Quat,
        scales: Vector3<f64>,
        opacity: f64,
        rgb: Vector3<f64>,
    ) -> Self {
        Gaussian3D::new(
            mu,
            q,
            scales.map(f64::ln),
            logit(opacity),
            rgb.map(|c| logit(c.clamp(1e-6, 1.0 - 1e-6))),
        )
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rgb(&self) -> Vector3<f64> {
        self.color.map(sigmoid)
    }

    pub fn rgb_init(&self) -> Vector3<f64> {
        self.color_init.map(sigmoid)
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        build_covariance(crate::quat::unit_or_identity(self.q), &self.log_scale)
    }

    /// Makes the current values the new rest state.
    pub fn snapshot_init(&mut self) {
        self.mu_init = self.mu;
        self.q_init = self.q;
        self.log_scale_init = self.log_scale;
        self.color_init = self.color;
    }

    fn check(&self, index: usize) -> Result<()> {
        let finite = self.mu.iter().all(|v| v.is_finite())
            && self.mu_init.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.log_scale_init.iter().all(|v| v.is_finite())
            && self.color.iter().all(|v| v.is_finite())
            && self.color_init.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.q.is_finite()
            && self.q_init.is_finite();
        if !finite {
            return Err(Error::Config(format!("gaussian {index} has non-finite fields")));
        }
        if self.q.norm() == 0.0 || self.q_init.norm() == 0.0 {
            return Err(Error::DegenerateQuaternion);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Aabb { min, max })
    }

    pub fn center(&self) -> Vector3<f64> {
        0.5 * (self.min + self.max)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian3D>,
    pub background: Vector3<f64>,
    pub bbox: Aabb,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian3D>, background: Vector3<f64>) -> Result<Self> {
        let bbox = Aabb::from_points(gaussians.iter().map(|g| &g.mu_init)).ok_or(Error::EmptyScene)?;
        let scene = GaussianScene {
            gaussians,
            background,
            bbox,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaussians.is_empty() {
            return Err(Error::EmptyScene);
        }
        for (i, g) in self.gaussians.iter().enumerate() {
            g.check(i)?;
        }
        Ok(())
    }

    /// Starts an edit session: current values become the rest snapshot.
    pub fn snapshot_init(&mut self) {
        for g in &mut self.gaussians {
            g.snapshot_init();
        }
        self.refresh_bbox();
    }

    pub fn refresh_bbox(&mut self) {
        if let Some(b) = Aabb::from_points(self.gaussians.iter().map(|g| &g.mu_init)) {
            self.bbox = b;
        }
    }

    /// Largest rest distance from the bbox center, used to scale position rates.
    pub fn extent_radius(&self) -> f64 {
        let c = self.bbox.center();
        let r = self
            .gaussians
            .iter()
            .map(|g| (g.mu_init - c).norm())
            .fold(0.0, f64::max);
        r.max(1e-6)
    }
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`. `q` must be unit.
pub fn build_covariance(q: Quat, log_scale: &Vector3<f64>) -> Matrix3<f64> {
    let r = q.to_rotmat();
    let s2 = log_scale.map(|s| (2.0 * s).exp());
    r * Matrix3::from_diagonal(&s2) * r.transpose()
}

/// Pulls a symmetric gradient on `Σ` back to `(unit q, log_scale)`.
pub fn covariance_vjp(
    q: Quat,
    log_scale: &Vector3<f64>,
    d_sigma: &Matrix3<f64>,
) -> (Vector4<f64>, Vector3<f64>) {
    let r = q.to_rotmat();
    let s = log_scale.map(f64::exp);
    let m = r * Matrix3::from_diagonal(&s);
    // Σ = M Mᵀ  =>  dL/dM = (G + Gᵀ) M
    let dm = (d_sigma + d_sigma.transpose()) * m;
    let mut d_log_scale = Vector3::zeros();
    let mut d_r = Matrix3::zeros();
    for k in 0..3 {
        let col = dm.column(k);
        d_log_scale[k] = col.dot(&r.column(k)) * s[k];
        d_r.set_column(k, &(col * s[k]));
    }
    (q.rotmat_vjp(&d_r), d_log_scale)
}

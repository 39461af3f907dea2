use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::deform::AnchorConfig;
use crate::error::{Error, Result};
use crate::loss::TransportConfig;
use crate::regularize::{DEFAULT_K_REG, MASK_RESET_ETA, MASK_RESET_PERIOD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineMode {
    /// Adds the scale-preservation term.
    Geometry,
    /// Adds the color-preservation term.
    Texture,
    Hybrid,
}

impl FineMode {
    pub fn uses_scale(self) -> bool {
        matches!(self, FineMode::Geometry | FineMode::Hybrid)
    }

    pub fn uses_color(self) -> bool {
        matches!(self, FineMode::Texture | FineMode::Hybrid)
    }
}

/// Anchor optimization. The anchor rate of 0.02 comes from the reference
/// implementation's "default" Adam step, applied here to anchors only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseConfig {
    pub iterations: usize,
    pub lambda_l1: f64,
    pub lambda_ssim: f64,
    pub lambda_pos: f64,
    pub lambda_arap: f64,
    pub lambda_rot: f64,
    pub lambda_dist: f64,
    pub lambda_mask: f64,
    pub positional: bool,
    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_rotation: f64,
    pub lr_mask: f64,
    pub mask_reset_period: usize,
    pub mask_reset_eta: f64,
    pub k_reg: usize,
    pub gamma: f64,
    /// Stop as soon as the reference-view PSNR reaches this value.
    pub psnr_target: Option<f64>,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            lambda_l1: 3.2,
            lambda_ssim: 0.8,
            lambda_pos: 1.0,
            lambda_arap: 600.0,
            lambda_rot: 600.0,
            lambda_dist: 30.0,
            lambda_mask: 0.005,
            positional: true,
            lr_position: 0.02,
            lr_position_final: 0.002,
            lr_rotation: 0.02,
            lr_mask: 0.01,
            mask_reset_period: MASK_RESET_PERIOD,
            mask_reset_eta: MASK_RESET_ETA,
            k_reg: DEFAULT_K_REG,
            gamma: 5.0,
            psnr_target: None,
        }
    }
}

/// Per-Gaussian optimization. Rates follow the usual 3DGS defaults; the
/// mean rate is multiplied by the scene extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineConfig {
    pub iterations: usize,
    pub mode: FineMode,
    pub lambda_l1: f64,
    pub lambda_ssim: f64,
    pub lambda_pos: f64,
    pub lambda_arap: f64,
    pub lambda_rot: f64,
    pub lambda_dist: f64,
    pub lambda_mask: f64,
    pub lambda_scale: f64,
    pub lambda_color: f64,
    pub positional: bool,
    pub lr_means: f64,
    pub lr_means_final: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_color: f64,
    pub lr_mask: f64,
    pub mask_reset_period: usize,
    pub mask_reset_eta: f64,
    pub k_reg: usize,
    pub gamma: f64,
    pub psnr_target: Option<f64>,
}

impl Default for FineConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            mode: FineMode::Hybrid,
            lambda_l1: 0.8,
            lambda_ssim: 0.2,
            lambda_pos: 1.0,
            lambda_arap: 300.0,
            lambda_rot: 30.0,
            lambda_dist: 30.0,
            lambda_mask: 0.005,
            lambda_scale: 300.0,
            lambda_color: 1.0,
            positional: true,
            lr_means: 1.6e-4,
            lr_means_final: 1.6e-6,
            lr_opacity: 0.05,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_color: 2.5e-3,
            lr_mask: 0.01,
            mask_reset_period: MASK_RESET_PERIOD,
            mask_reset_eta: MASK_RESET_ETA,
            k_reg: DEFAULT_K_REG,
            gamma: 5.0,
            psnr_target: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditConfig {
    pub anchors: AnchorConfig,
    pub transport: TransportConfig,
    pub coarse: CoarseConfig,
    pub fine: FineConfig,
    pub skip_fine: bool,
}

fn check_weights(stage: &str, weights: &[(&str, f64)]) -> Result<()> {
    for (name, w) in weights {
        if !(*w >= 0.0) || !w.is_finite() {
            return Err(Error::Config(format!("{stage}.{name} must be a finite nonnegative weight")));
        }
    }
    Ok(())
}

impl CoarseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("coarse.iterations must be positive".into()));
        }
        check_weights(
            "coarse",
            &[
                ("lambda_l1", self.lambda_l1),
                ("lambda_ssim", self.lambda_ssim),
                ("lambda_pos", self.lambda_pos),
                ("lambda_arap", self.lambda_arap),
                ("lambda_rot", self.lambda_rot),
                ("lambda_dist", self.lambda_dist),
                ("lambda_mask", self.lambda_mask),
                ("lr_position", self.lr_position),
                ("lr_position_final", self.lr_position_final),
                ("lr_rotation", self.lr_rotation),
                ("lr_mask", self.lr_mask),
            ],
        )?;
        if !(self.mask_reset_eta > 0.0 && self.mask_reset_eta < 1.0) {
            return Err(Error::Config("coarse.mask_reset_eta must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

impl FineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("fine.iterations must be positive".into()));
        }
        check_weights(
            "fine",
            &[
                ("lambda_l1", self.lambda_l1),
                ("lambda_ssim", self.lambda_ssim),
                ("lambda_pos", self.lambda_pos),
                ("lambda_arap", self.lambda_arap),
                ("lambda_rot", self.lambda_rot),
                ("lambda_dist", self.lambda_dist),
                ("lambda_mask", self.lambda_mask),
                ("lambda_scale", self.lambda_scale),
                ("lambda_color", self.lambda_color),
                ("lr_means", self.lr_means),
                ("lr_means_final", self.lr_means_final),
                ("lr_opacity", self.lr_opacity),
                ("lr_scale", self.lr_scale),
                ("lr_rotation", self.lr_rotation),
                ("lr_color", self.lr_color),
                ("lr_mask", self.lr_mask),
            ],
        )?;
        if !(self.mask_reset_eta > 0.0 && self.mask_reset_eta < 1.0) {
            return Err(Error::Config("fine.mask_reset_eta must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        self.transport.validate()?;
        self.coarse.validate()?;
        self.fine.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: EditConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Photometric-only fitting: positional loss off and every regularizer
    /// weight zero.
    /// Same config with the positional term off in both stages; the
    /// regularizers are kept.
    pub fn without_positional(mut self) -> Self {
        self.coarse.positional = false;
        self.fine.positional = false;
        self
    }

    pub fn photometric_only(mut self) -> Self {
        for c in [&mut self.coarse.positional, &mut self.fine.positional] {
            *c = false;
        }
        let c = &mut self.coarse;
        c.lambda_arap = 0.0;
        c.lambda_rot = 0.0;
        c.lambda_dist = 0.0;
        c.lambda_mask = 0.0;
        let f = &mut self.fine;
        f.lambda_arap = 0.0;
        f.lambda_rot = 0.0;
        f.lambda_dist = 0.0;
        f.lambda_mask = 0.0;
        f.lambda_scale = 0.0;
        f.lambda_color = 0.0;
        self
    }
}

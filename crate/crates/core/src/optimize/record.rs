use serde::{Deserialize, Serialize};

/// Raw (unweighted) loss components of one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub dssim: f64,
    pub positional: f64,
    pub arap: f64,
    pub rotation: f64,
    pub distance: f64,
    pub mask: f64,
    pub scale: f64,
    pub color: f64,
    pub total: f64,
}

/// Weights applied to the components of a [`LossBreakdown`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub ssim: f64,
    pub positional: f64,
    pub arap: f64,
    pub rotation: f64,
    pub distance: f64,
    pub mask: f64,
    pub scale: f64,
    pub color: f64,
}

impl LossBreakdown {
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.l1 * self.l1
            + w.ssim * self.dssim
            + w.positional * self.positional
            + w.arap * self.arap
            + w.rotation * self.rotation
            + w.distance * self.distance
            + w.mask * self.mask
            + w.scale * self.scale
            + w.color * self.color
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
        }
    }
}

/// One line of the progress log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub stage: Stage,
    pub loss: LossBreakdown,
    pub psnr: f64,
}

/// Line-delimited JSON, one record per line.
pub fn to_jsonl(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("log records always serialize"));
        out.push('\n');
    }
    out
}

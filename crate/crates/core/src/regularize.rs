//! Rigidity regularizers over a frozen KNN graph with learnable edge masks.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::deform::{knn, rbf_weights};
use crate::error::{Error, Result};
use crate::loss::abs_grad;
use crate::quat::Quat;
use crate::scene::{logit, sigmoid};

pub const DEFAULT_K_REG: usize = 8;
pub const MASK_INIT: f64 = 0.99;
pub const MASK_RESET_ETA: f64 = 0.99;
pub const MASK_RESET_PERIOD: usize = 3000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Anchors,
    Gaussians,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskFamily {
    Arap,
    Rotation,
    Distance,
}

/// Smallest logit whose sigmoid is at least `p`, so thresholds hold exactly
/// after the round trip through floating point.
pub fn logit_at_least(p: f64) -> f64 {
    let mut m = logit(p);
    while sigmoid(m) < p {
        m = m.next_up();
    }
    m
}

/// Directed KNN edges with `k` neighbors per node, stored node-major:
/// edge `e = i * k + t` joins node `i` to `neighbors[e]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidityGraph {
    pub kind: NodeKind,
    pub k: usize,
    pub gamma: f64,
    pub rest: Vec<Vector3<f64>>,
    pub neighbors: Vec<usize>,
    pub kappa_hat: Vec<f64>,
    pub kappa: Vec<f64>,
    pub rest_dist2: Vec<f64>,
    pub mask_arap: Vec<f64>,
    pub mask_rot: Vec<f64>,
    pub mask_dist: Vec<f64>,
}

impl RigidityGraph {
    pub fn build(kind: NodeKind, rest: &[Vector3<f64>], k: usize, gamma: f64) -> Result<Self> {
        if rest.len() < 2 {
            return Err(Error::Config("rigidity graph needs at least two nodes".into()));
        }
        let k = k.min(rest.len() - 1);
        let lists = knn(rest, rest, k, true)?;
        let mut neighbors = Vec::with_capacity(rest.len() * k);
        let mut kappa_hat = Vec::with_capacity(rest.len() * k);
        let mut kappa = Vec::with_capacity(rest.len() * k);
        let mut rest_dist2 = Vec::with_capacity(rest.len() * k);
        for (i, list) in lists.iter().enumerate() {
            let d: Vec<f64> = list.iter().map(|&j| (rest[i] - rest[j]).norm()).collect();
            kappa_hat.extend(d.iter().map(|d| (-gamma * d * d).exp()));
            kappa.extend(rbf_weights(&d, gamma));
            rest_dist2.extend(list.iter().map(|&j| (rest[i] - rest[j]).norm_squared()));
            neighbors.extend_from_slice(list);
        }
        let m0 = logit_at_least(MASK_INIT);
        let edges = neighbors.len();
        Ok(Self {
            kind,
            k,
            gamma,
            rest: rest.to_vec(),
            neighbors,
            kappa_hat,
            kappa,
            rest_dist2,
            mask_arap: vec![m0; edges],
            mask_rot: vec![m0; edges],
            mask_dist: vec![m0; edges],
        })
    }

    pub fn node_count(&self) -> usize {
        self.rest.len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        (e / self.k, self.neighbors[e])
    }

    pub fn masks(&self, family: MaskFamily) -> &[f64] {
        match family {
            MaskFamily::Arap => &self.mask_arap,
            MaskFamily::Rotation => &self.mask_rot,
            MaskFamily::Distance => &self.mask_dist,
        }
    }

    pub fn masks_mut(&mut self, family: MaskFamily) -> &mut Vec<f64> {
        match family {
            MaskFamily::Arap => &mut self.mask_arap,
            MaskFamily::Rotation => &mut self.mask_rot,
            MaskFamily::Distance => &mut self.mask_dist,
        }
    }

    pub fn mask_values(&self, family: MaskFamily) -> Vec<f64> {
        self.masks(family).iter().map(|m| sigmoid(*m)).collect()
    }

    pub fn write_edge_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "i,j,kappa,arap,rotation,distance").map_err(|e| Error::io(path, e))?;
        for e in 0..self.edge_count() {
            let (i, j) = self.edge(e);
            writeln!(
                buf,
                "{i},{j},{},{},{},{}",
                self.kappa[e],
                sigmoid(self.mask_arap[e]),
                sigmoid(self.mask_rot[e]),
                sigmoid(self.mask_dist[e])
            )
            .map_err(|e| Error::io(path, e))?;
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Mean mask value of the edges leaving each node.
    pub fn node_mask_means(&self, family: MaskFamily) -> Vec<f64> {
        self.masks(family)
            .chunks(self.k)
            .map(|c| c.iter().map(|m| sigmoid(*m)).sum::<f64>() / self.k as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegTerm {
    pub value: f64,
    pub d_mu: Vec<Vector3<f64>>,
    /// Gradient on the quaternions passed in, treated as free 4-vectors.
    pub d_q: Vec<Vector4<f64>>,
    pub d_mask: Vec<f64>,
}

impl RegTerm {
    fn zeros(nodes: usize, edges: usize) -> Self {
        Self {
            value: 0.0,
            d_mu: vec![Vector3::zeros(); nodes],
            d_q: vec![Vector4::zeros(); nodes],
            d_mask: vec![0.0; edges],
        }
    }
}

fn check_len(graph: &RigidityGraph, n: usize) -> Result<()> {
    if n != graph.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "graph has {} nodes, got {n}",
            graph.node_count()
        )));
    }
    Ok(())
}

/// `(1/N) Σ κ σ(m) ‖R̄_i (p_i − p_j) − (μ̄_i − μ̄_j)‖²` with rest positions
/// `p` and per-node rotations given as unit quaternions.
pub fn arap_loss(graph: &RigidityGraph, mu: &[Vector3<f64>], rot: &[Quat]) -> Result<RegTerm> {
    check_len(graph, mu.len())?;
    check_len(graph, rot.len())?;
    let n = graph.node_count();
    let inv_n = 1.0 / n as f64;
    let mats: Vec<Matrix3<f64>> = rot.iter().map(|q| q.to_rotmat()).collect();
    let mut out = RegTerm::zeros(n, graph.edge_count());
    let mut d_rot = vec![Matrix3::zeros(); n];
    for e in 0..graph.edge_count() {
        let (i, j) = graph.edge(e);
        let rest = graph.rest[i] - graph.rest[j];
        let r = mats[i] * rest - (mu[i] - mu[j]);
        let s = sigmoid(graph.mask_arap[e]);
        let c = graph.kappa[e] * s * inv_n;
        let sq = r.norm_squared();
        out.value += c * sq;
        let g = 2.0 * c * r;
        out.d_mu[i] -= g;
        out.d_mu[j] += g;
        d_rot[i] += g * rest.transpose();
        out.d_mask[e] = graph.kappa[e] * s * (1.0 - s) * sq * inv_n;
    }
    for (dq, (q, dr)) in out.d_q.iter_mut().zip(rot.iter().zip(&d_rot)) {
        *dq = q.rotmat_vjp(dr);
    }
    Ok(out)
}

/// `(1/N) Σ κ σ(m^r) ‖q̄_i − q̄_j‖²` after flipping `q̄_j` into the
/// hemisphere of `q̄_i`.
pub fn rotation_loss(graph: &RigidityGraph, q: &[Quat]) -> Result<RegTerm> {
    check_len(graph, q.len())?;
    let n = graph.node_count();
    let inv_n = 1.0 / n as f64;
    let mut out = RegTerm::zeros(n, graph.edge_count());
    for e in 0..graph.edge_count() {
        let (i, j) = graph.edge(e);
        let qi = q[i].to_vec4();
        let qj = q[j].to_vec4();
        let sign = if qi.dot(&qj) < 0.0 { -1.0 } else { 1.0 };
        let diff = qi - sign * qj;
        let s = sigmoid(graph.mask_rot[e]);
        let c = graph.kappa[e] * s * inv_n;
        let sq = diff.norm_squared();
        out.value += c * sq;
        out.d_q[i] += 2.0 * c * diff;
        out.d_q[j] -= 2.0 * c * sign * diff;
        out.d_mask[e] = graph.kappa[e] * s * (1.0 - s) * sq * inv_n;
    }
    Ok(out)
}

/// `(1/N) Σ κ σ(m^d) | ‖μ̄_i − μ̄_j‖² − ‖p_i − p_j‖² |`.
pub fn distance_loss(graph: &RigidityGraph, mu: &[Vector3<f64>]) -> Result<RegTerm> {
    check_len(graph, mu.len())?;
    let n = graph.node_count();
    let inv_n = 1.0 / n as f64;
    let mut out = RegTerm::zeros(n, graph.edge_count());
    for e in 0..graph.edge_count() {
        let (i, j) = graph.edge(e);
        let d = mu[i] - mu[j];
        let gap = d.norm_squared() - graph.rest_dist2[e];
        let s = sigmoid(graph.mask_dist[e]);
        let c = graph.kappa[e] * s * inv_n;
        out.value += c * gap.abs();
        let g = 2.0 * c * abs_grad(gap) * d;
        out.d_mu[i] += g;
        out.d_mu[j] -= g;
        out.d_mask[e] = graph.kappa[e] * s * (1.0 - s) * gap.abs() * inv_n;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskL1 {
    pub value: f64,
    pub d_arap: Vec<f64>,
    pub d_rot: Vec<f64>,
    pub d_dist: Vec<f64>,
}

/// `Σ |σ(m) − 1|` over every edge of all three mask families.
pub fn mask_l1(graph: &RigidityGraph) -> MaskL1 {
    let family = |masks: &[f64]| -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let grad = masks
            .iter()
            .map(|m| {
                let s = sigmoid(*m);
                value += 1.0 - s;
                -s * (1.0 - s)
            })
            .collect();
        (value, grad)
    };
    let (va, d_arap) = family(&graph.mask_arap);
    let (vr, d_rot) = family(&graph.mask_rot);
    let (vd, d_dist) = family(&graph.mask_dist);
    MaskL1 {
        value: va + vr + vd,
        d_arap,
        d_rot,
        d_dist,
    }
}

/// Raises every mask to at least `η` after the sigmoid.
pub fn mask_reset(graph: &mut RigidityGraph, eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Config(format!("mask reset threshold {eta} outside (0, 1)")));
    }
    let floor = logit_at_least(eta);
    for family in [MaskFamily::Arap, MaskFamily::Rotation, MaskFamily::Distance] {
        for m in graph.masks_mut(family).iter_mut() {
            if sigmoid(*m) < eta {
                *m = floor;
            }
        }
    }
    Ok(())
}

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::knn::{knn, rbf_weights};
use crate::error::{Error, Result};
use crate::quat::Quat;
use crate::scene::{Aabb, GaussianScene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    pub n_anchors: usize,
    /// Cells along the longest bbox axis. `None` picks a resolution that
    /// yields about four occupied voxels per requested anchor.
    pub voxel_res: Option<usize>,
    pub k_lbs: usize,
    pub gamma: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            n_anchors: 800,
            voxel_res: None,
            k_lbs: 4,
            gamma: 5.0,
        }
    }
}

/// Sparse control points driving the Gaussians through linear blend skinning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub a_init: Vec<Vector3<f64>>,
    pub a: Vec<Vector3<f64>>,
    pub r: Vec<Quat>,
    /// Per-Gaussian anchor indices, nearest first.
    pub neighbors: Vec<Vec<usize>>,
    pub skin_weights: Vec<Vec<f64>>,
}

impl AnchorSet {
    /// Binds a set of rest anchors to the scene's rest centers.
    pub fn bind(
        scene: &GaussianScene,
        a_init: Vec<Vector3<f64>>,
        k_lbs: usize,
        gamma: f64,
    ) -> Result<Self> {
        let rest: Vec<Vector3<f64>> = scene.gaussians.iter().map(|g| g.mu_init).collect();
        let neighbors = knn(&a_init, &rest, k_lbs.min(a_init.len()), false)?;
        let skin_weights = neighbors
            .iter()
            .zip(&rest)
            .map(|(nb, p)| {
                let d: Vec<f64> = nb.iter().map(|&j| (a_init[j] - p).norm()).collect();
                rbf_weights(&d, gamma)
            })
            .collect();
        Ok(Self {
            a: a_init.clone(),
            r: vec![Quat::IDENTITY; a_init.len()],
            a_init,
            neighbors,
            skin_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.a_init.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_init.is_empty()
    }

    pub fn translations(&self) -> Vec<Vector3<f64>> {
        self.a.iter().zip(&self.a_init).map(|(a, a0)| a - a0).collect()
    }

    pub fn reset_motion(&mut self) {
        self.a = self.a_init.clone();
        self.r = vec![Quat::IDENTITY; self.a_init.len()];
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Mean of the points falling into each occupied cell of a cubic grid with
/// `res` cells along the longest bbox axis, in lexicographic cell order.
pub fn voxel_centroids(points: &[Vector3<f64>], bbox: &Aabb, res: usize) -> Vec<Vector3<f64>> {
    let res = res.max(1);
    let longest = bbox.extent().max();
    let cell = if longest > 0.0 {
        longest / res as f64
    } else {
        1.0
    };
    let mut cells: BTreeMap<[i64; 3], (Vector3<f64>, usize)> = BTreeMap::new();
    for p in points {
        let rel = (p - bbox.min) / cell;
        let key = [0, 1, 2].map(|k| (rel[k].floor() as i64).clamp(0, res as i64 - 1));
        let entry = cells.entry(key).or_insert((Vector3::zeros(), 0));
        entry.0 += p;
        entry.1 += 1;
    }
    cells.into_values().map(|(s, n)| s / n as f64).collect()
}

/// Greedy max-min subset starting from `start`; ties go to the lower index.
pub fn farthest_point_sampling(points: &[Vector3<f64>], n: usize, start: usize) -> Vec<usize> {
    let n = n.min(points.len());
    if n == 0 {
        return Vec::new();
    }
    let mut chosen = vec![start];
    let mut min_d: Vec<f64> = points
        .iter()
        .map(|p| (p - points[start]).norm_squared())
        .collect();
    while chosen.len() < n {
        let mut best = 0;
        for (i, d) in min_d.iter().enumerate() {
            if *d > min_d[best] {
                best = i;
            }
        }
        chosen.push(best);
        for (d, p) in min_d.iter_mut().zip(points) {
            *d = d.min((p - points[best]).norm_squared());
        }
    }
    chosen
}

fn auto_resolution(points: &[Vector3<f64>], bbox: &Aabb, n_anchors: usize) -> usize {
    let goal = 4 * n_anchors;
    let mut res = 1;
    let mut last = 0;
    while res < 4096 {
        let count = voxel_centroids(points, bbox, res).len();
        if count >= goal || count == points.len() {
            return res;
        }
        if count < last {
            log::debug!("occupied voxel count dropped at resolution {res}");
        }
        last = count;
        res += 1 + res / 8;
    }
    res
}

pub fn init_anchors(scene: &GaussianScene, cfg: &AnchorConfig) -> Result<AnchorSet> {
    if cfg.n_anchors < 4 {
        return Err(Error::TooFewAnchors(cfg.n_anchors));
    }
    if cfg.k_lbs == 0 || !(cfg.gamma > 0.0) {
        return Err(Error::Config("k_lbs must be positive and gamma > 0".into()));
    }
    let rest: Vec<Vector3<f64>> = scene.gaussians.iter().map(|g| g.mu_init).collect();
    let bbox = Aabb::from_points(&rest).ok_or(Error::EmptyScene)?;
    let res = cfg
        .voxel_res
        .unwrap_or_else(|| auto_resolution(&rest, &bbox, cfg.n_anchors));
    let cloud = voxel_centroids(&rest, &bbox, res);
    if cloud.len() < cfg.n_anchors {
        return Err(Error::TooFewVoxels {
            occupied: cloud.len(),
            requested: cfg.n_anchors,
        });
    }
    let center = bbox.center();
    let start = cloud
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1 - center)
                .norm_squared()
                .total_cmp(&(b.1 - center).norm_squared())
                .then(a.0.cmp(&b.0))
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    let picked = farthest_point_sampling(&cloud, cfg.n_anchors, start);
    log::debug!(
        "voxel res {res}: {} occupied cells, {} anchors",
        cloud.len(),
        picked.len()
    );
    let a_init = picked.into_iter().map(|i| cloud[i]).collect();
    AnchorSet::bind(scene, a_init, cfg.k_lbs, cfg.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian3D;

    fn cloud_scene(n: usize) -> GaussianScene {
        let gs = (0..n)
            .map(|i| {
                let t = i as f64;
                let mu = Vector3::new((t * 0.37).sin(), (t * 0.11).cos(), (t * 0.23).sin() * 0.5);
                Gaussian3D::from_display(mu, Quat::IDENTITY, Vector3::repeat(0.05), 0.8, Vector3::repeat(0.5))
            })
            .collect();
        GaussianScene::new(gs, Vector3::zeros()).unwrap()
    }

    #[test]
    fn fps_collinear() {
        let pts: Vec<Vector3<f64>> = [0.0, 1.0, 2.0, 10.0]
            .iter()
            .map(|&x| Vector3::new(x, 0.0, 0.0))
            .collect();
        assert_eq!(farthest_point_sampling(&pts, 2, 0), vec![0, 3]);
        assert_eq!(farthest_point_sampling(&pts, 3, 0), vec![0, 3, 2]);
    }

    #[test]
    fn voxel_means() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.1, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        let bbox = Aabb::from_points(&pts).unwrap();
        let c = voxel_centroids(&pts, &bbox, 2);
        assert_eq!(c.len(), 2);
        assert!((c[0] - Vector3::new(0.05, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(c[1], pts[2]);
    }

    #[test]
    fn anchors_well_formed() {
        let scene = cloud_scene(300);
        let cfg = AnchorConfig {
            n_anchors: 16,
            ..Default::default()
        };
        let set = init_anchors(&scene, &cfg).unwrap();
        assert_eq!(set.len(), 16);
        assert_eq!(set.neighbors.len(), 300);
        for w in &set.skin_weights {
            assert_eq!(w.len(), 4);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(set.r.iter().all(|q| *q == Quat::IDENTITY));
        let again = init_anchors(&scene, &cfg).unwrap();
        assert_eq!(set, again);
    }

    #[test]
    fn too_few() {
        let scene = cloud_scene(10);
        let cfg = AnchorConfig {
            n_anchors: 3,
            ..Default::default()
        };
        assert!(matches!(init_anchors(&scene, &cfg), Err(Error::TooFewAnchors(3))));
        let cfg = AnchorConfig {
            n_anchors: 50,
            ..Default::default()
        };
        assert!(matches!(
            init_anchors(&scene, &cfg),
            Err(Error::TooFewVoxels { requested: 50, .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let scene = cloud_scene(100);
        let cfg = AnchorConfig {
            n_anchors: 8,
            ..Default::default()
        };
        let set = init_anchors(&scene, &cfg).unwrap();
        let text = serde_json::to_string(&set).unwrap();
        let back: AnchorSet = serde_json::from_str(&text).unwrap();
        assert_eq!(set, back);
    }
}

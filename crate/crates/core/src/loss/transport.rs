//! Tile downsampling and log-domain Sinkhorn transport between images.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportConfig {
    /// Tile edge in pixels.
    pub tile: usize,
    /// Weight of the color term in the cost; `1 − lambda_color` weighs position.
    pub lambda_color: f64,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
    /// Length that pixel coordinates are divided by in the cost. `None`
    /// uses the image diagonal.
    pub position_scale: Option<f64>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            tile: 16,
            lambda_color: 0.5,
            sinkhorn_epsilon: 0.01,
            sinkhorn_iters: 100,
            position_scale: None,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile == 0 {
            return Err(Error::Config("tile must be positive".into()));
        }
        if !(self.sinkhorn_epsilon > 0.0) {
            return Err(Error::Config("sinkhorn_epsilon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_color) {
            return Err(Error::Config("lambda_color must lie in [0, 1]".into()));
        }
        if let Some(s) = self.position_scale {
            if !(s > 0.0) {
                return Err(Error::Config("position_scale must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn scale_for(&self, width: usize, height: usize) -> f64 {
        self.position_scale
            .unwrap_or_else(|| ((width * width + height * height) as f64).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tile {
    /// Tile center in pixel coordinates.
    pub position: Vector2<f64>,
    pub color: Vector3<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub tile: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub tiles: Vec<Tile>,
}

impl TileGrid {
    pub fn tile_of_pixel(&self, x: usize, y: usize) -> usize {
        (y / self.tile) * self.tiles_x + x / self.tile
    }
}

/// Averages colors over `tile × tile` blocks. Edge tiles that run past the
/// image are padded by clamping to the border pixel. Masses are uniform.
pub fn tile_downsample(image: &Image, tile: usize) -> Result<TileGrid> {
    if tile == 0 || image.width < tile || image.height < tile {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} is smaller than tile {tile}",
            image.width, image.height
        )));
    }
    let tiles_x = image.width.div_ceil(tile);
    let tiles_y = image.height.div_ceil(tile);
    let n = tiles_x * tiles_y;
    let mass = 1.0 / n as f64;
    let mut tiles = Vec::with_capacity(n);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let mut acc = Vector3::zeros();
            for dy in 0..tile {
                let y = (ty * tile + dy).min(image.height - 1);
                for dx in 0..tile {
                    let x = (tx * tile + dx).min(image.width - 1);
                    acc += image.get(x, y);
                }
            }
            let half = tile as f64 / 2.0;
            tiles.push(Tile {
                position: Vector2::new((tx * tile) as f64 + half, (ty * tile) as f64 + half),
                color: acc / (tile * tile) as f64,
                mass,
            });
        }
    }
    Ok(TileGrid {
        tile,
        tiles_x,
        tiles_y,
        tiles,
    })
}

/// `λ‖c(u) − c(v)‖² + (1 − λ)‖(u − v)/scale‖²`.
pub fn transport_cost(src: &Tile, dst: &Tile, cfg: &TransportConfig, scale: f64) -> f64 {
    let lambda = cfg.lambda_color;
    let dc = (src.color - dst.color).norm_squared();
    let dp = ((src.position - dst.position) / scale).norm_squared();
    lambda * dc + (1.0 - lambda) * dp
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub source_tiles: Vec<Tile>,
    pub target_tiles: Vec<Tile>,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `n_source × n_target` coupling.
    pub plan: Vec<f64>,
    /// Barycentric image of each source tile, in pixel coordinates.
    pub target_map: Vec<Vector2<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Row-marginal L1 error of the last Sinkhorn iterate, before rounding.
    pub marginal_error: f64,
}

impl TransportPlan {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let m = self.cols;
        self.plan.chunks_exact(m).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let m = self.cols;
        let mut c = vec![0.0; m];
        for row in self.plan.chunks_exact(m) {
            for (cj, v) in c.iter_mut().zip(row) {
                *cj += v;
            }
        }
        c
    }

    /// `Σ P(u, v)·cost(u, v)` for an explicit cost matrix.
    pub fn cost(&self, cost: &[f64]) -> f64 {
        self.plan.iter().zip(cost).map(|(p, c)| p * c).sum()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

const MARGINAL_TOL: f64 = 1e-10;

/// Entropic transport between tile sets.
pub fn sinkhorn(src: &[Tile], dst: &[Tile], cfg: &TransportConfig, scale: f64) -> Result<TransportPlan> {
    let cost: Vec<f64> = src
        .iter()
        .flat_map(|s| dst.iter().map(move |d| (s, d)))
        .map(|(s, d)| transport_cost(s, d, cfg, scale))
        .collect();
    let a: Vec<f64> = src.iter().map(|t| t.mass).collect();
    let b: Vec<f64> = dst.iter().map(|t| t.mass).collect();
    let mut plan = sinkhorn_matrix(&a, &b, &cost, cfg.sinkhorn_epsilon, cfg.sinkhorn_iters)?;
    let m = dst.len();
    plan.target_map = plan
        .plan
        .chunks_exact(m)
        .map(|row| {
            let w: f64 = row.iter().sum();
            let p: Vector2<f64> = row.iter().zip(dst).map(|(p, t)| t.position * *p).sum();
            if w > 0.0 {
                p / w
            } else {
                Vector2::zeros()
            }
        })
        .collect();
    plan.source_tiles = src.to_vec();
    plan.target_tiles = dst.to_vec();
    Ok(plan)
}

/// Log-domain Sinkhorn on an explicit cost matrix, followed by rounding onto
/// the transport polytope so both marginals hold to rounding error.
pub fn sinkhorn_matrix(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    epsilon: f64,
    iters: usize,
) -> Result<TransportPlan> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 || cost.len() != n * m {
        return Err(Error::DimensionMismatch(format!(
            "cost has {} entries for {n}x{m} marginals",
            cost.len()
        )));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-9 * sa.max(sb) {
        return Err(Error::DimensionMismatch(format!(
            "unequal total mass: {sa} vs {sb}"
        )));
    }
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let log_plan = |f: &[f64], g: &[f64], i: usize, j: usize| {
        log_a[i] + log_b[j] + (f[i] + g[j] - cost[i * m + j]) / epsilon
    };
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    while iterations < iters.max(1) {
        for i in 0..n {
            let lse = log_sum_exp((0..m).map(|j| log_b[j] + (g[j] - cost[i * m + j]) / epsilon));
            f[i] = -epsilon * lse;
        }
        for j in 0..m {
            let lse = log_sum_exp((0..n).map(|i| log_a[i] + (f[i] - cost[i * m + j]) / epsilon));
            g[j] = -epsilon * lse;
        }
        iterations += 1;
        err = (0..n)
            .map(|i| ((0..m).map(|j| log_plan(&f, &g, i, j).exp()).sum::<f64>() - a[i]).abs())
            .sum();
        if err < MARGINAL_TOL {
            break;
        }
    }
    let converged = err < MARGINAL_TOL;
    if !converged {
        log::warn!(
            "sinkhorn did not converge in {iterations} iterations (marginal error {err:.3e}); using best iterate"
        );
    }
    let mut plan: Vec<f64> = (0..n * m).map(|k| log_plan(&f, &g, k / m, k % m).exp()).collect();
    round_to_marginals(&mut plan, a, b);
    Ok(TransportPlan {
        source_tiles: Vec::new(),
        target_tiles: Vec::new(),
        rows: n,
        cols: m,
        plan,
        target_map: Vec::new(),
        iterations,
        converged,
        marginal_error: err,
    })
}

/// Projects a nonnegative matrix onto `{P ≥ 0 : P1 = a, Pᵀ1 = b}`
/// (row/column shrink followed by a rank-one correction).
fn round_to_marginals(plan: &mut [f64], a: &[f64], b: &[f64]) {
    let m = b.len();
    for (i, row) in plan.chunks_exact_mut(m).enumerate() {
        let r: f64 = row.iter().sum();
        if r > a[i] {
            let s = a[i] / r;
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
    let mut col = vec![0.0; m];
    for row in plan.chunks_exact(m) {
        for (c, v) in col.iter_mut().zip(row) {
            *c += v;
        }
    }
    for row in plan.chunks_exact_mut(m) {
        for j in 0..m {
            if col[j] > b[j] {
                row[j] *= b[j] / col[j];
            }
        }
    }
    let err_a: Vec<f64> = plan
        .chunks_exact(m)
        .zip(a)
        .map(|(row, ai)| (ai - row.iter().sum::<f64>()).max(0.0))
        .collect();
    let mut col = vec![0.0; m];
    for row in plan.chunks_exact(m) {
        for (c, v) in col.iter_mut().zip(row) {
            *c += v;
        }
    }
    let err_b: Vec<f64> = b.iter().zip(&col).map(|(bj, c)| (bj - c).max(0.0)).collect();
    let total: f64 = err_a.iter().sum();
    if total > 0.0 {
        for (row, ea) in plan.chunks_exact_mut(m).zip(&err_a) {
            for (v, eb) in row.iter_mut().zip(&err_b) {
                *v += ea * eb / total;
            }
        }
    }
}

/// Barycentric map of `xy` corrected by the self-transport map `xx`:
/// `pos(u) + v̂_xy(u) − v̂_xx(u)`. Equal for identical inputs, so transport of
/// an image onto itself yields zero displacement.
pub fn debiased_target_map(xy: &TransportPlan, xx: &TransportPlan) -> Vec<Vector2<f64>> {
    xy.source_tiles
        .iter()
        .zip(xy.target_map.iter().zip(&xx.target_map))
        .map(|(t, (a, b))| t.position + (a - b))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_tiles() {
        let img = Image::filled(40, 24, Vector3::new(0.2, 0.4, 0.6));
        let grid = tile_downsample(&img, 16).unwrap();
        assert_eq!((grid.tiles_x, grid.tiles_y), (3, 2));
        for t in &grid.tiles {
            assert!((t.color - Vector3::new(0.2, 0.4, 0.6)).norm() < 1e-12);
            assert!((t.mass - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tile_centers() {
        let grid = tile_downsample(&Image::new(32, 32), 16).unwrap();
        let centers: Vec<_> = grid.tiles.iter().map(|t| (t.position.x, t.position.y)).collect();
        assert_eq!(centers, vec![(8.0, 8.0), (24.0, 8.0), (8.0, 24.0), (24.0, 24.0)]);
    }

    #[test]
    fn aligned_checkerboard() {
        let img = Image::from_fn(32, 32, |x, y| {
            if (x / 16 + y / 16) % 2 == 0 {
                Vector3::repeat(1.0)
            } else {
                Vector3::zeros()
            }
        });
        let grid = tile_downsample(&img, 16).unwrap();
        let lum: Vec<f64> = grid.tiles.iter().map(|t| t.color.x).collect();
        assert_eq!(lum, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn cost_examples() {
        let cfg = TransportConfig::default();
        let t = |x: f64, c: f64| Tile {
            position: Vector2::new(x, 0.0),
            color: Vector3::repeat(c),
            mass: 1.0,
        };
        assert_eq!(transport_cost(&t(3.0, 0.5), &t(3.0, 0.5), &cfg, 1.0), 0.0);
        assert!((transport_cost(&t(0.0, 0.0), &t(0.0, 1.0), &cfg, 1.0) - 1.5).abs() < 1e-15);
        assert!((transport_cost(&t(0.0, 0.3), &t(0.25, 0.3), &cfg, 1.0) - 0.5 * 0.0625).abs() < 1e-15);
    }

    #[test]
    fn marginals_are_exact_after_rounding() {
        let a = [0.25; 4];
        let b = [0.25; 4];
        let cost: Vec<f64> = (0..16).map(|k| ((k * 7919) % 13) as f64 / 13.0).collect();
        // few iterations on purpose: rounding must still give feasible plans
        let plan = sinkhorn_matrix(&a, &b, &cost, 0.01, 3).unwrap();
        for (r, c) in plan.row_sums().iter().zip(plan.col_sums()) {
            assert!((r - 0.25).abs() < 1e-12);
            assert!((c - 0.25).abs() < 1e-12);
        }
        assert!(plan.plan.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn unequal_mass_rejected() {
        assert!(sinkhorn_matrix(&[0.5, 0.5], &[1.0, 0.5], &[0.0; 4], 0.1, 10).is_err());
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// With uniform marginals the LP optimum is a permutation (Birkhoff).
    fn lp_optimum(cost: &[f64], n: usize) -> f64 {
        permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn entropic_plan_approaches_lp_optimum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for n in 1..=5 {
            for _ in 0..20 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect();
                let u = vec![1.0 / n as f64; n];
                let exact = lp_optimum(&cost, n);
                let mut gaps = Vec::new();
                for eps in [0.1, 0.01, 0.001] {
                    let plan = sinkhorn_matrix(&u, &u, &cost, eps, 5000).unwrap();
                    for (r, c) in plan.row_sums().iter().zip(plan.col_sums()) {
                        assert!((r - u[0]).abs() < 1e-6 && (c - u[0]).abs() < 1e-6);
                    }
                    gaps.push(plan.cost(&cost) - exact);
                }
                assert!(gaps.iter().all(|g| *g >= -1e-9));
                let last = gaps[gaps.len() - 1];
                assert!(last <= 0.01 * exact.max(1e-3), "n={n} gap {last} vs lp {exact}");
                assert!(gaps[2] <= gaps[0] + 1e-9);
            }
        }
    }

    #[test]
    fn self_transport_has_zero_displacement() {
        let img = Image::from_fn(32, 32, |x, y| Vector3::new(x as f64 / 32.0, y as f64 / 32.0, 0.5));
        let cfg = TransportConfig {
            tile: 8,
            ..TransportConfig::default()
        };
        let term = crate::loss::positional_loss(&img, &img, &cfg).unwrap();
        assert!(term.value <= 1e-8, "{}", term.value);
    }
}

//! Central finite-difference checks of every analytic gradient path.

use nalgebra::{Matrix2, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::Camera;
use crate::deform::{lbs_apply, lbs_backward, AnchorSet};
use crate::error::Result;
use crate::image::Image;
use crate::loss::sqrtm::{matrix_sqrt_2x2, sqrt_vjp};
use crate::loss::{photometric_loss, positional_splat_grads, DisplacementField};
use crate::quat::Quat;
use crate::regularize::{arap_loss, distance_loss, rotation_loss, NodeKind, RigidityGraph};
use crate::render::{chain_splat_grads, render_backward_color, render_forward, GaussianGrad, RenderOutput};
use crate::scene::{Gaussian3D, GaussianScene};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub checked: usize,
    /// Parameters skipped because the fragment topology changed at every
    /// tried step size.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance && self.checked > 0
    }
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const PARAMS_PER_GAUSSIAN: usize = 14;

/// Mutable handle on parameter `k` of a Gaussian: μ (0..3), q (3..7),
/// log-scale (7..10), opacity logit (10), color logits (11..14).
pub fn param_mut(g: &mut Gaussian3D, k: usize) -> &mut f64 {
    match k {
        0..=2 => &mut g.mu[k],
        3 => &mut g.q.w,
        4 => &mut g.q.x,
        5 => &mut g.q.y,
        6 => &mut g.q.z,
        7..=9 => &mut g.log_scale[k - 7],
        10 => &mut g.opacity_logit,
        11..=13 => &mut g.color[k - 11],
        _ => panic!("parameter index {k} out of range"),
    }
}

pub fn grad_component(g: &GaussianGrad, k: usize) -> f64 {
    match k {
        0..=2 => g.mu[k],
        3..=6 => g.q[k - 3],
        7..=9 => g.log_scale[k - 7],
        10 => g.opacity_logit,
        11..=13 => g.color[k - 11],
        _ => panic!("parameter index {k} out of range"),
    }
}

pub fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> GaussianScene {
    let gs = (0..n)
        .map(|_| {
            let mu = Vector3::new(
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.6..0.6),
            );
            let q = Quat::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let q = if q.norm() < 0.1 { Quat::IDENTITY } else { q };
            let scales = Vector3::new(
                rng.random_range(0.08..0.35),
                rng.random_range(0.08..0.35),
                rng.random_range(0.08..0.35),
            );
            let rgb = Vector3::new(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
            Gaussian3D::from_display(mu, q, scales, rng.random_range(0.3..0.9), rgb)
        })
        .collect();
    let bg = Vector3::new(rng.random_range(0.0..0.3), rng.random_range(0.0..0.3), rng.random_range(0.0..0.3));
    GaussianScene::new(gs, bg).expect("nonempty random scene")
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    let phase: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..6.28));
    Image::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64 / w as f64, y as f64 / h as f64);
        Vector3::from_fn(|c, _| 0.5 + 0.35 * (5.0 * x + phase[c]).sin() * (4.0 * y + phase[c + 3]).cos())
    })
}

pub fn check_camera(size: usize) -> Camera {
    Camera::look_at(
        size,
        size,
        size as f64,
        Vector3::new(0.3, -0.2, -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
    )
    .expect("valid check camera")
}

/// Central difference of `f` along one parameter of Gaussian `i`. Steps are
/// halved until both probes keep the base fragment topology.
fn topology_fd(
    scene: &GaussianScene,
    cam: &Camera,
    base: &[Vec<u32>],
    i: usize,
    k: usize,
    h0: f64,
    f: &dyn Fn(&RenderOutput) -> f64,
) -> Option<f64> {
    let mut h = h0;
    for _ in 0..6 {
        let mut plus = scene.clone();
        *param_mut(&mut plus.gaussians[i], k) += h;
        let mut minus = scene.clone();
        *param_mut(&mut minus.gaussians[i], k) -= h;
        let op = render_forward(&plus, cam);
        let om = render_forward(&minus, cam);
        if op.topology() == base && om.topology() == base {
            return Some((f(&op) - f(&om)) / (2.0 * h));
        }
        h *= 0.25;
    }
    None
}

/// Photometric gradients of every parameter family on random scenes.
pub fn rasterizer_suite(seed: u64, scenes: usize, max_gaussians: usize, size: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = check_camera(size);
    let mut report = SuiteReport {
        name: "rasterizer".into(),
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        tolerance: 1e-3,
    };
    for _ in 0..scenes {
        let n = rng.random_range(1..=max_gaussians);
        let scene = random_scene(&mut rng, n);
        let reference = random_image(&mut rng, size, size);
        let loss = |o: &RenderOutput| {
            photometric_loss(&o.image, &reference, 0.8, 0.2, None)
                .map(|l| l.total)
                .unwrap_or(f64::NAN)
        };
        let out = render_forward(&scene, &cam);
        let photo = photometric_loss(&out.image, &reference, 0.8, 0.2, None)?;
        let grads = render_backward_color(&scene, &cam, &out, &photo.grad)?;
        let topo = out.topology();
        for i in 0..n {
            for k in 0..PARAMS_PER_GAUSSIAN {
                match topology_fd(&scene, &cam, &topo, i, k, 1e-5, &loss) {
                    Some(fd) => {
                        let e = rel_err(grad_component(&grads[i], k), fd, 1e-6);
                        report.max_rel_err = report.max_rel_err.max(e);
                        report.checked += 1;
                    }
                    None => report.skipped += 1,
                }
            }
        }
    }
    Ok(report)
}

fn random_spd(rng: &mut ChaCha8Rng) -> Matrix2<f64> {
    let m = Matrix2::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    );
    m * m.transpose() + Matrix2::identity() * 0.3
}

/// Fourth-order central difference of a matrix-valued map along `dir`.
fn stencil<const R: usize, const C: usize>(
    f: impl Fn(f64) -> Result<nalgebra::SMatrix<f64, R, C>>,
    h: f64,
) -> Result<nalgebra::SMatrix<f64, R, C>> {
    Ok((f(-2.0 * h)? - f(2.0 * h)? + (f(h)? - f(-h)?) * 8.0) / (12.0 * h))
}

/// Largest entry error of a directional derivative, relative to the
/// largest entry of the numerical derivative.
fn directional_err<const R: usize, const C: usize>(
    analytic: &nalgebra::SMatrix<f64, R, C>,
    numeric: &nalgebra::SMatrix<f64, R, C>,
    floor: f64,
) -> f64 {
    (analytic - numeric).amax() / numeric.amax().max(analytic.amax()).max(floor)
}

/// `p = μ' + Σ'^{1/2} ε` at fixed `ε` and the square-root sensitivity,
/// along every symmetric perturbation direction of `Σ'` and every axis of `μ'`.
pub fn reparameterization_suite(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport {
        name: "reparameterization".into(),
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        tolerance: 1e-5,
    };
    let h = 1e-4;
    let sym = |a: usize, b: usize| {
        let mut e = Matrix2::zeros();
        e[(a, b)] = 1.0;
        e[(b, a)] = 1.0;
        e
    };
    let dirs = [(0, 0), (1, 1), (0, 1)];
    for _ in 0..trials {
        let cov = random_spd(&mut rng);
        let mu = Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let eps = Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (root, sens) = matrix_sqrt_2x2(&cov)?;
        let p = |m: Vector2<f64>, c: &Matrix2<f64>| -> Result<Vector2<f64>> { Ok(m + matrix_sqrt_2x2(c)?.0 * eps) };
        for &(a, b) in &dirs {
            let e = sym(a, b);
            let fd_root = stencil(|t| Ok(matrix_sqrt_2x2(&(cov + e * t))?.0), h)?;
            let v = sens * Vector4::new(e[(0, 0)], e[(1, 0)], e[(0, 1)], e[(1, 1)]);
            let an_root = Matrix2::new(v[0], v[2], v[1], v[3]);
            report.max_rel_err = report.max_rel_err.max(directional_err(&an_root, &fd_root, 1e-12));
            report.checked += 4;

            let fd_p = stencil(|t| p(mu, &(cov + e * t)), h)?;
            let an_p = Vector2::from_fn(|out, _| {
                let mut gp = Vector2::zeros();
                gp[out] = 1.0;
                sqrt_vjp(&sens, &(gp * eps.transpose())).component_mul(&e).sum()
            });
            report.max_rel_err = report.max_rel_err.max(directional_err(&an_p, &fd_p, 1e-12));
            report.checked += 2;
        }
        for k in 0..2 {
            let dir = Vector2::from_fn(|i, _| if i == k { 1.0 } else { 0.0 });
            let fd = stencil(|t| p(mu + dir * t, &cov), h)?;
            report.max_rel_err = report.max_rel_err.max(directional_err(&dir, &fd, 1e-12));
            report.checked += 2;
        }
        report.max_rel_err = report.max_rel_err.max(((root * root - cov).amax()) / cov.amax());
    }
    Ok(report)
}

/// Positional gradients through projection: at a fixed displacement field
/// and fixed per-fragment `ε`, the surrogate `Σ_f w_f ⟨dL/du, p_f(θ)⟩` is
/// differentiated numerically and compared with the analytic chain.
pub fn positional_chain_suite(seed: u64, scenes: usize, size: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = check_camera(size);
    let mut report = SuiteReport {
        name: "positional-chain".into(),
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        tolerance: 1e-5,
    };
    for _ in 0..scenes {
        let n = rng.random_range(1..=8);
        let scene = random_scene(&mut rng, n);
        let out = render_forward(&scene, &cam);
        let tile = 4;
        let mut field = DisplacementField::zeros(size, size, tile);
        for d in field.displacement.iter_mut() {
            *d = Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        }
        let sg = positional_splat_grads(&out, &field, None)?;
        let grads = chain_splat_grads(&scene, &cam, &out.splats, &sg);
        // fixed ε and blend weights from the base render
        let mut samples = Vec::new();
        for y in 0..size {
            for x in 0..size {
                let du = field.pixel_gradient(field.tile_of_pixel(x, y));
                let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                for f in out.fragments_at(x, y) {
                    let s = &out.splats[f.splat as usize];
                    let Ok((root, _)) = matrix_sqrt_2x2(&s.cov2d) else { continue };
                    let Some(inv) = root.try_inverse() else { continue };
                    samples.push((s.gaussian_index, inv * (p - s.mu2d), du * f.blend_weight));
                }
            }
        }
        let surrogate = |sc: &GaussianScene| -> f64 {
            let splats = crate::render::project_scene(sc, &cam);
            let by_index: std::collections::HashMap<usize, &crate::render::Splat2D> =
                splats.iter().map(|s| (s.gaussian_index, s)).collect();
            samples
                .iter()
                .map(|(gi, eps, gp)| {
                    let s = by_index[gi];
                    let root = matrix_sqrt_2x2(&s.cov2d).expect("SPD screen covariance").0;
                    gp.dot(&(s.mu2d + root * eps))
                })
                .sum()
        };
        let h = 1e-6;
        for i in 0..n {
            for k in 0..10 {
                let mut plus = scene.clone();
                *param_mut(&mut plus.gaussians[i], k) += h;
                let mut minus = scene.clone();
                *param_mut(&mut minus.gaussians[i], k) -= h;
                let fd = (surrogate(&plus) - surrogate(&minus)) / (2.0 * h);
                let e = rel_err(grad_component(&grads[i], k), fd, 1e-4);
                report.max_rel_err = report.max_rel_err.max(e);
                report.checked += 1;
            }
        }
    }
    Ok(report)
}

/// Skinned centers and rotations against anchor positions and quaternions.
pub fn lbs_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = random_scene(&mut rng, 30);
    let a_init: Vec<Vector3<f64>> = (0..8)
        .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)))
        .collect();
    let mut set = AnchorSet::bind(&scene, a_init, 4, 5.0)?;
    for (a, r) in set.a.iter_mut().zip(set.r.iter_mut()) {
        *a += Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
        *r = Quat::from_axis_angle(
            &Vector3::new(rng.random(), rng.random(), rng.random()),
            rng.random_range(-0.7..0.7),
        )
        .scale(rng.random_range(0.8..1.2));
    }
    let d_mu: Vec<Vector3<f64>> = (0..scene.len()).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect();
    let d_q: Vec<Vector4<f64>> =
        (0..scene.len()).map(|_| Vector4::new(rng.random(), rng.random(), rng.random(), rng.random())).collect();
    let objective = |s: &AnchorSet| -> Result<f64> {
        let out = lbs_apply(s, &scene)?;
        Ok((0..scene.len()).map(|i| d_mu[i].dot(&out.mu[i]) + d_q[i].dot(&out.q[i].to_vec4())).sum())
    };
    let fwd = lbs_apply(&set, &scene)?;
    let grad = lbs_backward(&set, &scene, &fwd, &d_mu, &d_q);
    let mut report = SuiteReport {
        name: "lbs".into(),
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        tolerance: 1e-5,
    };
    let h = 1e-6;
    for j in 0..set.len() {
        for k in 0..7 {
            let bump = |s: &mut AnchorSet, d: f64| {
                if k < 3 {
                    s.a[j][k] += d;
                } else {
                    let mut v = s.r[j].to_vec4();
                    v[k - 3] += d;
                    s.r[j] = Quat::from_vec4(&v);
                }
            };
            let mut p = set.clone();
            bump(&mut p, h);
            let mut m = set.clone();
            bump(&mut m, -h);
            let fd = (objective(&p)? - objective(&m)?) / (2.0 * h);
            let an = if k < 3 { grad.a[j][k] } else { grad.r[j][k - 3] };
            report.max_rel_err = report.max_rel_err.max(rel_err(an, fd, 1e-3));
            report.checked += 1;
        }
    }
    Ok(report)
}

/// ARAP, rotation and distance gradients on random 20-node graphs.
pub fn regularizer_suite(seed: u64, graphs: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport {
        name: "regularizers".into(),
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        tolerance: 1e-4,
    };
    let h = 1e-6;
    for _ in 0..graphs {
        let rest: Vec<Vector3<f64>> = (0..20)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mut g = RigidityGraph::build(NodeKind::Gaussians, &rest, 8, 5.0)?;
        for m in g.mask_arap.iter_mut().chain(g.mask_rot.iter_mut()).chain(g.mask_dist.iter_mut()) {
            *m = rng.random_range(-2.0..4.0);
        }
        let mu: Vec<Vector3<f64>> = rest
            .iter()
            .map(|p| p + Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)))
            .collect();
        let q: Vec<Quat> = (0..20)
            .map(|_| {
                Quat::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            })
            .collect();
        let total = |mu: &[Vector3<f64>], q: &[Quat]| -> Result<f64> {
            Ok(arap_loss(&g, mu, q)?.value + rotation_loss(&g, q)?.value + distance_loss(&g, mu)?.value)
        };
        let a = arap_loss(&g, &mu, &q)?;
        let r = rotation_loss(&g, &q)?;
        let d = distance_loss(&g, &mu)?;
        for i in 0..20 {
            for k in 0..7 {
                let bump = |mu: &mut Vec<Vector3<f64>>, q: &mut Vec<Quat>, s: f64| {
                    if k < 3 {
                        mu[i][k] += s;
                    } else {
                        let mut v = q[i].to_vec4();
                        v[k - 3] += s;
                        q[i] = Quat::from_vec4(&v);
                    }
                };
                let (mut mp, mut qp) = (mu.clone(), q.clone());
                bump(&mut mp, &mut qp, h);
                let (mut mm, mut qm) = (mu.clone(), q.clone());
                bump(&mut mm, &mut qm, -h);
                let fd = (total(&mp, &qp)? - total(&mm, &qm)?) / (2.0 * h);
                let an = if k < 3 {
                    a.d_mu[i][k] + d.d_mu[i][k]
                } else {
                    a.d_q[i][k - 3] + r.d_q[i][k - 3]
                };
                report.max_rel_err = report.max_rel_err.max(rel_err(an, fd, 1e-4));
                report.checked += 1;
            }
        }
    }
    Ok(report)
}

/// Every suite at the sizes used by the acceptance checks.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        rasterizer_suite(seed, 20, 20, 32)?,
        reparameterization_suite(seed, 50)?,
        positional_chain_suite(seed, 5, 32)?,
        lbs_suite(seed)?,
        regularizer_suite(seed, 5)?,
    ])
}

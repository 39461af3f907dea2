use nalgebra::{Matrix3, Vector3, Vector4};

use super::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::quat::{normalize_vjp, unit_or_identity, Quat};
use crate::scene::GaussianScene;

const MIN_BLEND_NORM: f64 = 1e-6;

/// Deformed centers and rotations, plus the unnormalized blended anchor
/// quaternion of each Gaussian for the backward pass.
#[derive(Clone, Debug)]
pub struct LbsOutput {
    pub mu: Vec<Vector3<f64>>,
    pub q: Vec<Quat>,
    blend: Vec<Vector4<f64>>,
    signs: Vec<Vec<f64>>,
}

impl LbsOutput {
    /// Writes the deformed state into the scene's current fields.
    pub fn write_to(&self, scene: &mut GaussianScene) {
        for (g, (mu, q)) in scene.gaussians.iter_mut().zip(self.mu.iter().zip(&self.q)) {
            g.mu = *mu;
            g.q = *q;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrad {
    pub a: Vec<Vector3<f64>>,
    /// With respect to the raw (unnormalized) anchor quaternions.
    pub r: Vec<Vector4<f64>>,
}

impl AnchorGrad {
    pub fn zeros(n: usize) -> Self {
        Self {
            a: vec![Vector3::zeros(); n],
            r: vec![Vector4::zeros(); n],
        }
    }
}

fn unit_rotations(anchors: &AnchorSet) -> Vec<Quat> {
    anchors.r.iter().map(|r| unit_or_identity(*r)).collect()
}

pub fn lbs_apply(anchors: &AnchorSet, scene: &GaussianScene) -> Result<LbsOutput> {
    if anchors.neighbors.len() != scene.len() {
        return Err(Error::DimensionMismatch(format!(
            "anchor set is bound to {} Gaussians, scene has {}",
            anchors.neighbors.len(),
            scene.len()
        )));
    }
    let units = unit_rotations(anchors);
    let mats: Vec<Matrix3<f64>> = units
        .iter()
        .map(|q| q.to_rotmat() - Matrix3::identity())
        .collect();
    let n = scene.len();
    let mut out = LbsOutput {
        mu: Vec::with_capacity(n),
        q: Vec::with_capacity(n),
        blend: Vec::with_capacity(n),
        signs: Vec::with_capacity(n),
    };
    for (i, g) in scene.gaussians.iter().enumerate() {
        let nb = &anchors.neighbors[i];
        let w = &anchors.skin_weights[i];
        let mut offset = Vector3::zeros();
        let mut blend = Vector4::zeros();
        let lead = units[nb[0]].to_vec4();
        let mut signs = Vec::with_capacity(nb.len());
        for (&j, &wij) in nb.iter().zip(w) {
            offset += wij * (mats[j] * (g.mu_init - anchors.a_init[j]) + (anchors.a[j] - anchors.a_init[j]));
            let rj = units[j].to_vec4();
            let s = if rj.dot(&lead) < 0.0 { -1.0 } else { 1.0 };
            signs.push(s);
            blend += wij * s * rj;
        }
        let norm = blend.norm();
        if !(norm >= MIN_BLEND_NORM) {
            return Err(Error::AntipodalRotations(norm));
        }
        let b = Quat::from_vec4(&(blend / norm));
        out.mu.push(g.mu_init + offset);
        out.q.push(b.hamilton(g.q_init));
        out.blend.push(blend);
        out.signs.push(signs);
    }
    Ok(out)
}

/// Pulls gradients on the deformed centers and rotations back to anchor
/// positions and raw anchor quaternions.
pub fn lbs_backward(
    anchors: &AnchorSet,
    scene: &GaussianScene,
    fwd: &LbsOutput,
    d_mu: &[Vector3<f64>],
    d_q: &[Vector4<f64>],
) -> AnchorGrad {
    let units = unit_rotations(anchors);
    let mut d_rot = vec![Matrix3::zeros(); anchors.len()];
    let mut d_unit = vec![Vector4::zeros(); anchors.len()];
    let mut grad = AnchorGrad::zeros(anchors.len());
    for (i, g) in scene.gaussians.iter().enumerate() {
        let nb = &anchors.neighbors[i];
        let w = &anchors.skin_weights[i];
        let dmu = d_mu[i];
        let dq = d_q[i];
        let db_unit = g.q_init.right_matrix().transpose() * dq;
        let db = normalize_vjp(&fwd.blend[i], &db_unit);
        for ((&j, &wij), &s) in nb.iter().zip(w).zip(&fwd.signs[i]) {
            grad.a[j] += wij * dmu;
            d_rot[j] += wij * dmu * (g.mu_init - anchors.a_init[j]).transpose();
            d_unit[j] += wij * s * db;
        }
    }
    for j in 0..anchors.len() {
        let total = d_unit[j] + units[j].rotmat_vjp(&d_rot[j]);
        grad.r[j] = normalize_vjp(&anchors.r[j].to_vec4(), &total);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::{init_anchors, AnchorConfig};
    use crate::scene::Gaussian3D;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
        Quat::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize()
        .unwrap()
    }

    fn scene(rng: &mut ChaCha8Rng, n: usize) -> GaussianScene {
        let gs = (0..n)
            .map(|_| {
                let mu = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let q = random_quat(rng);
                Gaussian3D::from_display(mu, q, Vector3::repeat(0.05), 0.7, Vector3::repeat(0.3))
            })
            .collect();
        GaussianScene::new(gs, Vector3::zeros()).unwrap()
    }

    fn anchors(rng: &mut ChaCha8Rng, scene: &GaussianScene) -> AnchorSet {
        let cfg = AnchorConfig {
            n_anchors: 8,
            ..Default::default()
        };
        let mut set = init_anchors(scene, &cfg).unwrap();
        for (a, r) in set.a.iter_mut().zip(set.r.iter_mut()) {
            *a += Vector3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
            );
            *r = Quat::from_axis_angle(
                &Vector3::new(rng.random(), rng.random(), rng.random()),
                rng.random_range(-0.6..0.6),
            )
            .scale(rng.random_range(0.8..1.2));
        }
        set
    }

    #[test]
    fn identity_anchors_are_identity_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = scene(&mut rng, 50);
        let set = init_anchors(&s, &AnchorConfig { n_anchors: 8, ..Default::default() }).unwrap();
        let out = lbs_apply(&set, &s).unwrap();
        for (g, (mu, q)) in s.gaussians.iter().zip(out.mu.iter().zip(&out.q)) {
            assert!((mu - g.mu_init).norm() < 1e-12);
            assert!((q.to_vec4() - g.q_init.to_vec4()).norm() < 1e-12);
        }
    }

    #[test]
    fn common_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = scene(&mut rng, 40);
        let mut set = init_anchors(&s, &AnchorConfig { n_anchors: 8, ..Default::default() }).unwrap();
        let t = Vector3::new(0.3, -0.2, 0.5);
        for a in &mut set.a {
            *a += t;
        }
        let out = lbs_apply(&set, &s).unwrap();
        for (g, mu) in s.gaussians.iter().zip(&out.mu) {
            assert!((mu - g.mu_init - t).norm() < 1e-12);
        }
    }

    #[test]
    fn cancelling_translations() {
        let g = Gaussian3D::from_display(
            Vector3::new(0.1, 0.2, 0.3),
            Quat::IDENTITY,
            Vector3::repeat(0.1),
            0.5,
            Vector3::repeat(0.5),
        );
        let s = GaussianScene::new(vec![g], Vector3::zeros()).unwrap();
        let t = Vector3::new(1.0, 2.0, 3.0);
        let set = AnchorSet {
            a_init: vec![Vector3::zeros(), Vector3::x()],
            a: vec![t, Vector3::x() - t],
            r: vec![Quat::IDENTITY; 2],
            neighbors: vec![vec![0, 1]],
            skin_weights: vec![vec![0.5, 0.5]],
        };
        let out = lbs_apply(&set, &s).unwrap();
        assert!((out.mu[0] - s.gaussians[0].mu_init).norm() < 1e-12);
    }

    #[test]
    fn antipodal_error() {
        let s = GaussianScene::new(
            vec![Gaussian3D::from_display(
                Vector3::zeros(),
                Quat::IDENTITY,
                Vector3::repeat(0.1),
                0.5,
                Vector3::repeat(0.5),
            )],
            Vector3::zeros(),
        )
        .unwrap();
        let half = std::f64::consts::FRAC_1_SQRT_2;
        let set = AnchorSet {
            a_init: vec![Vector3::zeros(); 2],
            a: vec![Vector3::zeros(); 2],
            r: vec![Quat::new(half, half, 0.0, 0.0), Quat::new(half, -half, 0.0, 0.0)],
            neighbors: vec![vec![0, 1]],
            skin_weights: vec![vec![0.5, 0.5]],
        };
        assert!(lbs_apply(&set, &s).is_ok());
        let set = AnchorSet {
            skin_weights: vec![vec![1e-9, 0.0]],
            ..set
        };
        let err = lbs_apply(&set, &s).unwrap_err();
        assert!(err.to_string().contains("antipodal anchor rotations"));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = scene(&mut rng, 30);
        let set = anchors(&mut rng, &s);
        let d_mu: Vec<Vector3<f64>> = (0..s.len())
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let d_q: Vec<Vector4<f64>> = (0..s.len())
            .map(|_| Vector4::new(rng.random(), rng.random(), rng.random(), rng.random()))
            .collect();
        let objective = |set: &AnchorSet| {
            let out = lbs_apply(set, &s).unwrap();
            let mut acc = 0.0;
            for i in 0..s.len() {
                acc += d_mu[i].dot(&out.mu[i]) + d_q[i].dot(&out.q[i].to_vec4());
            }
            acc
        };
        let fwd = lbs_apply(&set, &s).unwrap();
        let grad = lbs_backward(&set, &s, &fwd, &d_mu, &d_q);
        let h = 1e-6;
        for j in 0..set.len() {
            for k in 0..3 {
                let mut p = set.clone();
                p.a[j][k] += h;
                let mut m = set.clone();
                m.a[j][k] -= h;
                let fd = (objective(&p) - objective(&m)) / (2.0 * h);
                assert!((fd - grad.a[j][k]).abs() <= 1e-5 * fd.abs().max(1e-3), "{fd} {}", grad.a[j][k]);
            }
            for k in 0..4 {
                let mut p = set.clone();
                let mut v = p.r[j].to_vec4();
                v[k] += h;
                p.r[j] = Quat::from_vec4(&v);
                let mut m = set.clone();
                let mut v = m.r[j].to_vec4();
                v[k] -= h;
                m.r[j] = Quat::from_vec4(&v);
                let fd = (objective(&p) - objective(&m)) / (2.0 * h);
                assert!((fd - grad.r[j][k]).abs() <= 1e-5 * fd.abs().max(1e-3), "{fd} {}", grad.r[j][k]);
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn rigid_equivariance(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = scene(&mut rng, 25);
            let set = anchors(&mut rng, &s);
            let qg = random_quat(&mut rng);
            let tg = Vector3::new(rng.random(), rng.random(), rng.random());
            let rg = qg.to_rotmat();
            let mut moved = set.clone();
            for (a, r) in moved.a.iter_mut().zip(moved.r.iter_mut()) {
                *a = rg * *a + tg;
                *r = qg.hamilton(*r);
            }
            let base = lbs_apply(&set, &s).unwrap();
            let out = lbs_apply(&moved, &s).unwrap();
            for i in 0..s.len() {
                proptest::prop_assert!((out.mu[i] - (rg * base.mu[i] + tg)).norm() < 1e-9);
                let want = qg.hamilton(base.q[i]).to_vec4();
                proptest::prop_assert!((out.q[i].to_vec4() - want).norm() < 1e-9);
            }
        }
    }
}

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Exact k-nearest neighbors by Euclidean distance, ties broken by the lower
/// index. With `exclude_self`, query `i` never returns point `i` (for
/// querying a set against itself).
pub fn knn(
    points: &[Vector3<f64>],
    queries: &[Vector3<f64>],
    k: usize,
    exclude_self: bool,
) -> Result<Vec<Vec<usize>>> {
    let available = if exclude_self {
        points.len().saturating_sub(1)
    } else {
        points.len()
    };
    if k > available {
        return Err(Error::KnnTooLarge { k, n: available });
    }
    let mut out = Vec::with_capacity(queries.len());
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(points.len());
    for (qi, q) in queries.iter().enumerate() {
        scratch.clear();
        scratch.extend(
            points
                .iter()
                .enumerate()
                .filter(|(pi, _)| !(exclude_self && *pi == qi))
                .map(|(pi, p)| ((p - q).norm_squared(), pi)),
        );
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k, cmp);
            scratch.truncate(k);
        }
        scratch.sort_by(cmp);
        out.push(scratch.iter().map(|(_, i)| *i).collect());
    }
    Ok(out)
}

/// `exp(-γ d²)` normalized to sum to one; falls back to uniform weights when
/// every kernel value underflows.
pub fn rbf_weights(distances: &[f64], gamma: f64) -> Vec<f64> {
    let raw: Vec<f64> = distances.iter().map(|d| (-gamma * d * d).exp()).collect();
    let sum: f64 = raw.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        let n = distances.len().max(1) as f64;
        return vec![1.0 / n; distances.len()];
    }
    raw.into_iter().map(|v| v / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_square_neighbors() {
        let pts = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        let nn = knn(&pts, &pts, 2, true).unwrap();
        assert_eq!(nn[0], vec![1, 2]);
        assert_eq!(nn[3], vec![1, 2]);
        let nn = knn(&pts, &pts[..1], 1, false).unwrap();
        assert_eq!(nn[0], vec![0]);
        let nn = knn(&pts, &pts, 1, true).unwrap();
        assert_eq!(nn[0], vec![1]);
    }

    #[test]
    fn k_too_large() {
        let pts = [Vector3::zeros(), Vector3::x()];
        assert!(knn(&pts, &pts, 2, true).is_err());
        assert!(knn(&pts, &pts, 3, false).is_err());
    }

    #[test]
    fn matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(5..60);
            let pts: Vec<Vector3<f64>> = (0..n)
                .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let k = rng.random_range(1..n);
            let got = knn(&pts, &pts, k, true).unwrap();
            for (i, row) in got.iter().enumerate() {
                let mut all: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| ((pts[j] - pts[i]).norm_squared(), j))
                    .collect();
                all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let want: Vec<usize> = all[..k].iter().map(|x| x.1).collect();
                assert_eq!(row, &want);
            }
        }
    }

    #[test]
    fn rbf_examples() {
        let w = rbf_weights(&[0.3, 0.3, 0.3, 0.3], 5.0);
        assert!(w.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let w = rbf_weights(&[0.0, 10.0], 5.0);
        assert!((w[0] - 1.0).abs() < 1e-15 && w[1] < 1e-100);
        let w = rbf_weights(&[100.0, 200.0], 5.0);
        assert_eq!(w, vec![0.5, 0.5]);
    }
}

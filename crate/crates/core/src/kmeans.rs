//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop once no centroid moves further than this (Euclidean).
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tolerance: 1e-6,
            seed: 42,
        }
    }
}

#[inline]
pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        acc += d * d;
    }
    acc
}

fn nearest<T: Scalar>(point: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, sq_dist(point, &centroids[0]));
    for (c, centroid) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn mean<T: Scalar>(points: &[&[T]], dim: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); dim];
    for p in points {
        for (a, v) in acc.iter_mut().zip(p.iter()) {
            *a += *v;
        }
    }
    let n = T::of_usize(points.len());
    acc.into_iter().map(|a| a / n).collect()
}

fn plus_plus_init<T: Scalar>(points: &[&[T]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let mut chosen = vec![false; points.len()];
    let first = rng.random_range(0..points.len());
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0]).as_f64()).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if target < d {
                    pick = Some(i);
                    break;
                }
                target -= d;
            }
            // rounding may walk past the end; take the last positive-weight point
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            chosen.iter().position(|&c| !c).unwrap()
        };
        chosen[next] = true;
        centroids.push(points[next].to_vec());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]).as_f64());
        }
    }
    centroids
}

/// Clusters `points` into at most `k` centroids.
///
/// `k` is clamped to the number of points. With `k == points.len()` the
/// centroids are the points themselves, with `k == 1` the mean.
pub fn kmeans<T: Scalar>(points: &[&[T]], k: usize, params: &KMeansParams) -> Vec<Vec<T>> {
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    let dim = points[0].len();
    let k = k.min(points.len());
    if k == points.len() {
        return points.iter().map(|p| p.to_vec()).collect();
    }
    if k == 1 {
        return vec![mean(points, dim)];
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignment = vec![0usize; points.len()];

    for _ in 0..params.max_iters {
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest(p, &centroids).0;
        }

        let mut members: Vec<Vec<&[T]>> = vec![Vec::new(); k];
        for (p, &a) in points.iter().zip(&assignment) {
            members[a].push(p);
        }

        let mut shift = 0.0f64;
        let mut next: Vec<Vec<T>> = Vec::with_capacity(k);
        for (c, m) in members.iter().enumerate() {
            let updated = if m.is_empty() {
                // reseed with the point lying furthest from its own centroid
                let (far, _) = points
                    .iter()
                    .zip(&assignment)
                    .enumerate()
                    .map(|(i, (p, &a))| (i, sq_dist(p, &centroids[a])))
                    .fold((0, T::neg_infinity()), |best, cur| if cur.1 > best.1 { cur } else { best });
                assignment[far] = c;
                points[far].to_vec()
            } else {
                mean(m, dim)
            };
            shift = shift.max(sq_dist(&updated, &centroids[c]).as_f64().sqrt());
            next.push(updated);
        }
        centroids = next;
        if shift < params.tolerance {
            break;
        }
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;

    fn as_refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|p| p.as_slice()).collect()
    }

    #[test]
    fn k_equal_to_n_returns_points() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.5]];
        let c = kmeans(&as_refs(&pts), 3, &KMeansParams::default());
        assert_eq!(c, pts);
        let c = kmeans(&as_refs(&pts), 10, &KMeansParams::default());
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn single_cluster_is_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]];
        let c = kmeans(&as_refs(&pts), 1, &KMeansParams::default());
        assert_eq!(c, vec![vec![3.0, 2.0]]);
    }

    #[test]
    fn duplicates_do_not_break_seeding() {
        let pts = vec![vec![1.0]; 6];
        let c = kmeans(&as_refs(&pts), 3, &KMeansParams::default());
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|v| v[0] == 1.0));
    }

    #[test]
    fn deterministic_for_seed() {
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let p = KMeansParams::default();
        assert_eq!(kmeans(&as_refs(&pts), 4, &p), kmeans(&as_refs(&pts), 4, &p));
    }
}

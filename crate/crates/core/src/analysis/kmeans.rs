//! Lloyd's k-means with k-means++ seeding.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct KMeans {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Inertia after each assignment step; non-increasing.
    pub inertia_history: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.centroids.nrows()];
        for &a in &self.assignments {
            c[a] += 1;
        }
        c
    }
}

pub fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the row of `set` nearest to `x`; ties go to the lowest index.
pub fn nearest(set: ArrayView2<f64>, x: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, row) in set.rows().into_iter().enumerate() {
        let d = sq_dist(row, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn seed_plus_plus(x: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, x.row(first))).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point coincides with a centroid already
            Err(_) => rng.random_range(0..n),
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, x.row(pick)));
        }
    }
    centroids
}

/// Clusters the rows of `x`. Deterministic for a given seed.
pub fn kmeans(x: ArrayView2<f64>, k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("need 1 <= k <= {n} rows, got {k}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(x, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        for (i, r) in x.rows().into_iter().enumerate() {
            let (c, d) = nearest(centroids.view(), r);
            changed |= assignments[i] != c;
            assignments[i] = c;
            dist[i] = d;
        }
        history.push(dist.iter().sum());
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, r) in x.rows().into_iter().enumerate() {
            sums.row_mut(assignments[i]).scaled_add(1.0, &r);
            counts[assignments[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
        // an empty cluster takes over the point worst served by its
        // (shared) centroid, which can only lower the inertia
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[assignments[i]] -= 1;
                counts[c] = 1;
                assignments[i] = c;
                dist[i] = 0.0;
                centroids.row_mut(c).assign(&x.row(i));
            }
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        inertia_history: history,
    })
}

/// Column means; the exact optimum for `k = 1`.
pub fn column_mean(x: ArrayView2<f64>) -> ndarray::Array1<f64> {
    x.mean_axis(Axis(0)).expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(seed: u64, n: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres = [[0.0, 0.0], [5.0, 5.0], [-4.0, 6.0]];
        Array2::from_shape_fn((n, 2), |(i, j)| {
            centres[i % 3][j] + rng.sample::<f64, _>(StandardNormal) * 0.8
        })
    }

    /// Inertia of the best assignment reachable by plain Lloyd iterations
    /// from a random subset of the points.
    fn restart_reference(x: ArrayView2<f64>, k: usize, restarts: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(999);
        let mut best = f64::INFINITY;
        for _ in 0..restarts {
            let idx = rand::seq::index::sample(&mut rng, x.nrows(), k);
            let mut c = Array2::from_shape_fn((k, 2), |(i, j)| x[[idx.index(i), j]]);
            let mut inertia = f64::INFINITY;
            for _ in 0..100 {
                let assign: Vec<usize> = x.rows().into_iter().map(|r| nearest(c.view(), r).0).collect();
                inertia = x
                    .rows()
                    .into_iter()
                    .zip(&assign)
                    .map(|(r, &a)| sq_dist(r, c.row(a)))
                    .sum();
                for ci in 0..k {
                    let members: Vec<usize> = (0..x.nrows()).filter(|&i| assign[i] == ci).collect();
                    if !members.is_empty() {
                        for j in 0..2 {
                            c[[ci, j]] = members.iter().map(|&i| x[[i, j]]).sum::<f64>() / members.len() as f64;
                        }
                    }
                }
            }
            best = best.min(inertia);
        }
        best
    }

    #[test]
    fn k_one_is_column_mean() {
        let x = blobs(1, 30);
        let km = kmeans(x.view(), 1, 0, 50).unwrap();
        let mean = column_mean(x.view());
        for j in 0..2 {
            assert!((km.centroids[[0, j]] - mean[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let x = blobs(2, 12);
        let km = kmeans(x.view(), 12, 3, 50).unwrap();
        assert_eq!(km.inertia(), 0.0);
        assert!(km.counts().iter().all(|&c| c == 1));
    }

    #[test]
    fn matches_best_of_restarts() {
        for seed in 0..5 {
            let x = blobs(seed, 20);
            let km = kmeans(x.view(), 3, seed, 100).unwrap();
            let reference = restart_reference(x.view(), 3, 100);
            assert!(km.inertia() <= reference * (1.0 + 1e-9), "{} > {}", km.inertia(), reference);
        }
    }

    #[test]
    fn inertia_never_increases_and_is_deterministic() {
        let x = blobs(4, 200);
        let a = kmeans(x.view(), 8, 11, 100).unwrap();
        for w in a.inertia_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        let b = kmeans(x.view(), 8, 11, 100).unwrap();
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn duplicates_and_bad_k() {
        let x = Array2::from_elem((6, 3), 1.5);
        let km = kmeans(x.view(), 3, 0, 10).unwrap();
        assert_eq!(km.inertia(), 0.0);
        assert!(kmeans(x.view(), 7, 0, 10).is_err());
        assert!(kmeans(x.view(), 0, 0, 10).is_err());
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let set = ndarray::array![[1.0, 0.0], [-1.0, 0.0]];
        assert_eq!(nearest(set.view(), ndarray::array![0.0, 0.0].view()).0, 0);
    }
}

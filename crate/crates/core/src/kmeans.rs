//! k-means++ seeding and Lloyd iterations, shared by the visual codebook and
//! the pseudo-class clustering.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{sq_dist, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub shift_tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iters: 300,
            shift_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// Within-cluster squared distance after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// Nearest centroid to `x`, lowest index on ties, with its squared distance.
pub fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = sq_dist(row, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the closest chosen centre.
pub fn kmeans_plus_plus<R: Rng>(data: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = data.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut dist: Vec<f64> = data.iter_rows().map(|r| sq_dist(r, data.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // guard against rounding landing on an already chosen zero-distance point
            if dist[pick] == 0.0 {
                pick = dist.iter().position(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // all remaining points coincide with chosen centres
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), data.row(next)));
        }
    }
    data.select_rows(&chosen)
}

fn assign(data: &Matrix, centroids: &Matrix) -> (Vec<usize>, Vec<f64>) {
    let pairs: Vec<(usize, f64)> = (0..data.rows())
        .into_par_iter()
        .map(|i| nearest(centroids, data.row(i)))
        .collect();
    pairs.into_iter().unzip()
}

pub fn kmeans<R: Rng>(data: &Matrix, params: &KMeansParams, rng: &mut R) -> Result<KMeans> {
    let (n, d) = (data.rows(), data.cols());
    let k = params.k;
    if k == 0 {
        return Err(Error::invalid("k-means needs at least one cluster"));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "cannot form {k} clusters from {n} points"
        )));
    }
    let mut centroids = kmeans_plus_plus(data, k, rng);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let (mut assignments, mut dists) = assign(data, &centroids);
    loop {
        trace.push(dists.iter().sum());
        iterations += 1;

        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
        let mut max_shift: f64 = 0.0;
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed at the point farthest from its own centroid
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("k <= n leaves a free point");
                taken.push(far);
                let shift = sq_dist(centroids.row(c), data.row(far)).sqrt();
                max_shift = max_shift.max(shift);
                centroids.row_mut(c).copy_from_slice(data.row(far));
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let new: Vec<f64> = sums.row(c).iter().map(|s| s * inv).collect();
            max_shift = max_shift.max(sq_dist(centroids.row(c), &new).sqrt());
            centroids.row_mut(c).copy_from_slice(&new);
        }

        (assignments, dists) = assign(data, &centroids);
        if max_shift < params.shift_tol || iterations >= params.max_iters {
            trace.push(dists.iter().sum());
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        objective_trace: trace,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..400).map(|_| (0..5).map(|_| normal.sample(&mut rng)).collect()).collect();
        let data = Matrix::from_rows(&rows);
        for seed in 0..5 {
            let km = kmeans(&data, &KMeansParams::new(12), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for w in km.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "{:?}", km.objective_trace);
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let data = Matrix::from_rows(&(0..50).map(|i| vec![(i * 7 % 13) as f64, (i % 5) as f64]).collect::<Vec<_>>());
        let a = kmeans(&data, &KMeansParams::new(4), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = kmeans(&data, &KMeansParams::new(4), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let data = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0], vec![2.0]]);
        let km = kmeans(&data, &KMeansParams::new(3), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(km.centroids.rows(), 3);
    }

    #[test]
    fn too_many_clusters_rejected() {
        let data = Matrix::from_rows(&[vec![1.0], vec![2.0]]);
        assert!(kmeans(&data, &KMeansParams::new(3), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}

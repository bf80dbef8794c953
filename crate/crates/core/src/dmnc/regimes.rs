//! Regime discovery on vectorized connectivity: k-means with k-means++
//! seeding, and PCA embeddings for plotting.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DmncError, Result};
use crate::ica;

const MAX_LLOYD_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeLabeling {
    /// Cluster per vector, numbered by first appearance.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub k: usize,
    pub inertia: f64,
    pub seed: u64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            while d2[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            0
        };
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let (n, dim, k) = (points.len(), points[0].len(), centroids.len());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITER {
        let assigned: Vec<(usize, f64)> = points.iter().map(|p| nearest(p, &centroids)).collect();
        let new_labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        if new_labels == labels {
            break;
        }
        labels = new_labels;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Re-seed from the point farthest from its own centroid.
                let far = (0..n)
                    .max_by(|&a, &b| assigned[a].1.total_cmp(&assigned[b].1).then(b.cmp(&a)))
                    .expect("non-empty");
                centroids[c] = points[far].clone();
                labels[far] = usize::MAX;
            }
        }
    }
    let labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum();
    (labels, centroids, inertia)
}

/// k-means with k-means++ seeding; restart `r` is seeded with `seed + r` and
/// the lowest inertia wins (earliest restart on ties).
pub fn cluster_regimes(vectors: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<RegimeLabeling> {
    if k == 0 || restarts == 0 {
        return Err(DmncError::InvalidParameter("k and restarts must be positive".into()));
    }
    if k > vectors.len() {
        return Err(DmncError::KTooLarge { k, n: vectors.len() });
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(DmncError::ShapeMismatch("ragged vectors".into()));
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(DmncError::NonFinite);
    }
    let runs: Vec<(Vec<usize>, Vec<Vec<f64>>, f64)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            lloyd(vectors, kmeans_pp(vectors, k, &mut rng))
        })
        .collect();
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.2 < runs[best].2 {
            best = r;
        }
    }
    let (labels, centroids, inertia) = runs.into_iter().nth(best).expect("at least one restart");

    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &labels {
        if remap[l] == usize::MAX {
            remap[l] = next;
            next += 1;
        }
    }
    for slot in remap.iter_mut().filter(|s| **s == usize::MAX) {
        *slot = next;
        next += 1;
    }
    let mut ordered = vec![Vec::new(); k];
    for (old, c) in centroids.into_iter().enumerate() {
        ordered[remap[old]] = c;
    }
    Ok(RegimeLabeling {
        labels: labels.into_iter().map(|l| remap[l]).collect(),
        centroids: ordered,
        k,
        inertia,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// One row per input vector.
    pub coords: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

/// Mean-centred projection onto the leading principal directions.
pub fn pca_embed(vectors: &[Vec<f64>], dims: usize) -> Result<Embedding> {
    let dim = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(DmncError::ShapeMismatch("ragged vectors".into()));
    }
    let x = DMatrix::from_fn(dim, vectors.len(), |d, s| vectors[s][d]);
    let p = ica::pca_project(&x, dims)?;
    Ok(Embedding {
        coords: p.scores.column_iter().map(|c| c.iter().copied().collect()).collect(),
        explained_variance: p.explained_variance,
    })
}

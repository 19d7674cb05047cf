//! Seeded k-means used to train every codebook.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITERS: usize = 25;

/// `k` centroids of dimension `dim`, stored row-major at `f32` precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansCodebook {
    pub k: usize,
    pub dim: usize,
    #[serde(with = "crate::blob")]
    pub centroids: Vec<f32>,
}

impl KMeansCodebook {
    pub fn from_centroids(k: usize, dim: usize, centroids: Vec<f32>) -> Result<Self> {
        let cb = Self { k, dim, centroids };
        cb.validate()?;
        Ok(cb)
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Index of the nearest centroid (lowest index on ties) and its squared distance.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        debug_assert_eq!(x.len(), self.dim);
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.chunks_exact(self.dim).enumerate() {
            let d: f64 = x
                .iter()
                .zip(c)
                .map(|(a, b)| {
                    let t = a - *b as f64;
                    t * t
                })
                .sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Sum of squared distances from each row of `data` to its nearest centroid.
    pub fn inertia(&self, data: &[f64]) -> f64 {
        data.chunks_exact(self.dim).map(|x| self.nearest(x).1).sum()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.k == 0 || self.dim == 0 || self.centroids.len() != self.k * self.dim {
            return Err(Error::malformed(format!(
                "codebook holds {} values for k={} dim={}",
                self.centroids.len(),
                self.k,
                self.dim
            )));
        }
        Ok(())
    }
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// `data` is row-major with rows of length `dim`. Iteration stops when an
/// assignment pass changes nothing or after `max_iters` passes. A cluster that
/// ends up empty is re-seeded with the point currently farthest from its own
/// centroid. The result depends only on the inputs and `seed`.
pub fn fit_kmeans(
    data: &[f64],
    dim: usize,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KMeansCodebook> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::invalid("data length is not a multiple of the dimension"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let n = data.len() / dim;
    if n < k {
        return Err(Error::InsufficientData { needed: k, got: n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(data, dim, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];

    for _ in 0..max_iters {
        let next: Vec<(usize, f64)> = data
            .par_chunks_exact(dim)
            .map(|x| nearest_f64(&centroids, dim, x))
            .collect();
        let changed = next
            .iter()
            .zip(&assignment)
            .any(|((c, _), prev)| c != prev);
        for (slot, (c, _)) in assignment.iter_mut().zip(&next) {
            *slot = *c;
        }
        if !changed {
            break;
        }

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (x, &c) in data.chunks_exact(dim).zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *s += v;
            }
        }

        let mut dists: Vec<f64> = next.iter().map(|(_, d)| *d).collect();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s * inv;
                }
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("n >= k >= 1");
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&data[far * dim..(far + 1) * dim]);
                dists[far] = 0.0;
            }
        }
    }

    Ok(KMeansCodebook {
        k,
        dim,
        centroids: centroids.iter().map(|v| *v as f32).collect(),
    })
}

fn nearest_f64(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(row(first));

    let mut d2: Vec<f64> = (0..n)
        .map(|i| crate::features::squared_l2(row(i), row(first)))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = row(pick).to_vec();
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = crate::features::squared_l2(&data[i * dim..(i + 1) * dim], &c);
            if nd < *d {
                *d = nd;
            }
        });
        centroids.extend_from_slice(&c);
    }
    centroids
}

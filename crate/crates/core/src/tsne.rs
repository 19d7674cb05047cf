//! Exact t-SNE into two dimensions.
//!
//! Result sets are a few dozen images, so the O(n²) formulation is used
//! directly: Gaussian input affinities calibrated per point to a target
//! perplexity, a Student-t output kernel, and gradient descent with momentum,
//! per-coordinate gains and early exaggeration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{squared_l2, FeatureSet};

pub const EXAGGERATION: f64 = 12.0;
pub const EXAGGERATION_ITERS: usize = 250;
pub const LEARNING_RATE: f64 = 200.0;
pub const INITIAL_MOMENTUM: f64 = 0.5;
pub const FINAL_MOMENTUM: f64 = 0.8;
pub const DEFAULT_ITERATIONS: usize = 1000;
/// KL divergence is recorded every this many iterations once exaggeration ends.
pub const KL_EVERY: usize = 50;

const INIT_STD: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;
const P_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub points: Vec<EmbeddedPoint>,
    pub kl_trace: Vec<f64>,
}

impl Embedding2D {
    /// Builds an embedding from explicit coordinates, without a KL trace.
    pub fn from_points<I, S>(points: I) -> Self
    where
        I: IntoIterator<Item = (S, f64, f64)>,
        S: Into<String>,
    {
        Self {
            points: points
                .into_iter()
                .map(|(id, x, y)| EmbeddedPoint { id: id.into(), x, y })
                .collect(),
            kl_trace: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddedPoint> {
        self.points.iter().find(|p| p.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.points.iter().position(|p| p.id == id)
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|p| [p.x, p.y]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    /// `None` picks `min(30, floor((n - 1) / 3))`.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: None,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
        }
    }
}

pub fn default_perplexity(n: usize) -> f64 {
    (((n.saturating_sub(1)) / 3) as f64).clamp(1.0, 30.0)
}

pub fn tsne_embed(vectors: &FeatureSet, config: &TsneConfig) -> Result<Embedding2D> {
    let n = vectors.len();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    let perplexity = config.perplexity.unwrap_or_else(|| default_perplexity(n));
    if !(perplexity > 0.0) || 3.0 * perplexity > (n - 1) as f64 {
        return Err(Error::invalid(format!(
            "perplexity {perplexity} is infeasible for {n} points (needs 0 < p <= (n - 1) / 3)"
        )));
    }

    let p = joint_affinities(vectors, perplexity);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut grad = vec![0.0; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut kl_trace = Vec::new();

    for it in 0..config.iterations {
        if it >= EXAGGERATION_ITERS && (it - EXAGGERATION_ITERS) % KL_EVERY == 0 {
            kl_trace.push(kl_divergence(&p, &y, n));
        }
        let exaggeration = if it < EXAGGERATION_ITERS { EXAGGERATION } else { 1.0 };
        let momentum = if it < EXAGGERATION_ITERS {
            INITIAL_MOMENTUM
        } else {
            FINAL_MOMENTUM
        };

        let mut sum_num = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                sum_num += 2.0 * v;
            }
        }

        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let mult = (exaggeration * p[i * n + j] - w / sum_num) * w;
                gx += mult * (y[2 * i] - y[2 * j]);
                gy += mult * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }

        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            update[k] = momentum * update[k] - LEARNING_RATE * gains[k] * grad[k];
            y[k] += update[k];
        }
        center(&mut y, n);
    }
    kl_trace.push(kl_divergence(&p, &y, n));

    Ok(Embedding2D {
        points: vectors
            .iter()
            .enumerate()
            .map(|(i, v)| EmbeddedPoint {
                id: v.id.clone(),
                x: y[2 * i],
                y: y[2 * i + 1],
            })
            .collect(),
        kl_trace,
    })
}

fn center(y: &mut [f64], n: usize) {
    let (mut mx, mut my) = (0.0, 0.0);
    for i in 0..n {
        mx += y[2 * i];
        my += y[2 * i + 1];
    }
    mx /= n as f64;
    my /= n as f64;
    for i in 0..n {
        y[2 * i] -= mx;
        y[2 * i + 1] -= my;
    }
}

/// Symmetrized, normalized input affinities `P` (row-major `n x n`).
pub(crate) fn joint_affinities(vectors: &FeatureSet, perplexity: f64) -> Vec<f64> {
    let n = vectors.len();
    let vs = vectors.vectors();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = squared_l2(&vs[i].values, &vs[j].values);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }

    let mut cond = vec![0.0; n * n];
    for i in 0..n {
        let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[i * n + j]).collect();
        let probs = calibrate_row(&row, perplexity);
        let mut k = 0;
        for j in 0..n {
            if j != i {
                cond[i * n + j] = probs[k];
                k += 1;
            }
        }
    }

    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / denom).max(P_FLOOR);
            }
        }
    }
    p
}

/// Binary search on the Gaussian precision so the row's entropy matches
/// `ln(perplexity)`.
fn calibrate_row(dist: &[f64], perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = dist.iter().map(|d| d - min).collect();

    let eval = |beta: f64| -> (Vec<f64>, f64) {
        let w: Vec<f64> = shifted.iter().map(|d| (-d * beta).exp()).collect();
        let sum: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|x| x / sum).collect();
        let entropy = -probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>();
        (probs, entropy)
    };

    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let (mut probs, mut entropy) = eval(beta);
    for _ in 0..200 {
        if (entropy - target).abs() < 1e-5 {
            break;
        }
        if entropy > target {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        if !beta.is_finite() || beta > 1e300 {
            break;
        }
        (probs, entropy) = eval(beta);
    }
    probs
}

fn kl_divergence(p: &[f64], y: &[f64], n: usize) -> f64 {
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                sum += v;
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let q = (num[i * n + j] / sum).max(P_FLOOR);
                let pij = p[i * n + j];
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use crate::kmeans::fit_kmeans;

    pub(crate) fn blobs(per: usize, d: usize, seed: u64) -> (FeatureSet, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut vs = Vec::new();
        let mut labels = Vec::new();
        for b in 0..3 {
            let mut c = vec![0.0; d];
            c[b] = 10.0;
            for k in 0..per {
                let v = c.iter().map(|x| x + normal.sample(&mut rng)).collect();
                vs.push(FeatureVector::new(format!("b{b}_{k}"), v).unwrap());
                labels.push(b);
            }
        }
        (FeatureSet::new(vs).unwrap(), labels)
    }

    #[test]
    fn identical_inputs_stay_finite() {
        let set = FeatureSet::new(
            (0..4)
                .map(|i| FeatureVector::new(i.to_string(), vec![1.0, 2.0, 3.0]).unwrap())
                .collect(),
        )
        .unwrap();
        let p = joint_affinities(&set, 1.0);
        let off: Vec<f64> = (0..4)
            .flat_map(|i| (0..4).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| p[i * 4 + j])
            .collect();
        assert!(off.iter().all(|v| (v - off[0]).abs() < 1e-15));
        let e = tsne_embed(&set, &TsneConfig::default()).unwrap();
        assert!(e.points.iter().all(|p| p.x.is_finite() && p.y.is_finite()));
        assert!(e.kl_trace.iter().all(|k| k.is_finite()));
    }

    #[test]
    fn output_shape_and_ids() {
        let (set, _) = blobs(5, 4, 1);
        let e = tsne_embed(&set, &TsneConfig { iterations: 300, ..Default::default() }).unwrap();
        assert_eq!(e.len(), set.len());
        for (p, v) in e.points.iter().zip(&set) {
            assert_eq!(p.id, v.id);
        }
        let mx: f64 = e.points.iter().map(|p| p.x).sum::<f64>() / e.len() as f64;
        assert!(mx.abs() < 1e-9);
    }

    #[test]
    fn separates_three_blobs() {
        let (set, labels) = blobs(30, 16, 7);
        let e = tsne_embed(&set, &TsneConfig { seed: 3, ..Default::default() }).unwrap();
        let flat: Vec<f64> = e.points.iter().flat_map(|p| [p.x, p.y]).collect();
        let cb = fit_kmeans(&flat, 2, 3, 50, 1).unwrap();
        let assigned: Vec<usize> = flat.chunks(2).map(|c| cb.nearest(c).0).collect();
        let mut purity = 0;
        for c in 0..3 {
            let mut counts = [0; 3];
            for (a, l) in assigned.iter().zip(&labels) {
                if *a == c {
                    counts[*l] += 1;
                }
            }
            purity += counts.iter().max().unwrap();
        }
        assert!(purity as f64 / 90.0 >= 0.9);
        assert!(e.kl_trace.last().unwrap() < e.kl_trace.first().unwrap());
    }

    #[test]
    fn deterministic() {
        let (set, _) = blobs(6, 5, 2);
        let cfg = TsneConfig { iterations: 400, seed: 11, ..Default::default() };
        let a = tsne_embed(&set, &cfg).unwrap();
        let b = tsne_embed(&set, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argument_errors() {
        let (set, _) = blobs(2, 3, 0);
        let cfg = TsneConfig { perplexity: Some(2.0), ..Default::default() };
        assert!(matches!(tsne_embed(&set, &cfg), Err(Error::InvalidArgument(_))));
        let small = FeatureSet::new(set.vectors()[..3].to_vec()).unwrap();
        assert!(matches!(tsne_embed(&small, &TsneConfig::default()), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn perplexity_calibration_hits_target() {
        let dist = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let probs = calibrate_row(&dist, 3.0);
        let h: f64 = -probs.iter().map(|p| p * p.ln()).sum::<f64>();
        assert!((h - 3.0f64.ln()).abs() < 1e-4);
    }
}

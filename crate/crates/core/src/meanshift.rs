//! Flat-kernel mean shift over a 2-D embedding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tsne::Embedding2D;

pub const DEFAULT_BANDWIDTH_FRACTION: f64 = 0.1;
pub const MAX_SHIFT_ITERS: usize = 300;
const CONVERGENCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: BTreeMap<String, usize>,
    pub modes: Vec<[f64; 2]>,
    pub bandwidth: f64,
}

impl ClusterAssignment {
    pub fn num_clusters(&self) -> usize {
        self.modes.len()
    }

    pub fn label(&self, id: &str) -> Option<usize> {
        self.labels.get(id).copied()
    }

    pub fn cluster_size(&self, label: usize) -> usize {
        self.labels.values().filter(|l| **l == label).count()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.modes.len()];
        for l in self.labels.values() {
            sizes[*l] += 1;
        }
        sizes
    }
}

/// `fraction` times the diagonal of the embedding's bounding box.
pub fn estimate_bandwidth(embedding: &Embedding2D, fraction: f64) -> Result<f64> {
    if embedding.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: embedding.len(),
        });
    }
    if !(fraction > 0.0) || !fraction.is_finite() {
        return Err(Error::invalid(format!("bandwidth fraction must be positive, got {fraction}")));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &embedding.points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let diag = (x1 - x0).hypot(y1 - y0);
    if !(diag > 0.0) {
        return Err(Error::invalid("embedding has zero extent"));
    }
    Ok(fraction * diag)
}

pub fn mean_shift(embedding: &Embedding2D, bandwidth: f64) -> Result<ClusterAssignment> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let data = embedding.coords();
    let r2 = bandwidth * bandwidth;
    let tol = CONVERGENCE * bandwidth;

    let converged: Vec<[f64; 2]> = data
        .iter()
        .map(|&start| {
            let mut cur = start;
            for _ in 0..MAX_SHIFT_ITERS {
                let (mut sx, mut sy, mut cnt) = (0.0, 0.0, 0usize);
                for p in &data {
                    let (dx, dy) = (p[0] - cur[0], p[1] - cur[1]);
                    if dx * dx + dy * dy <= r2 {
                        sx += p[0];
                        sy += p[1];
                        cnt += 1;
                    }
                }
                if cnt == 0 {
                    break;
                }
                let next = [sx / cnt as f64, sy / cnt as f64];
                let moved = (next[0] - cur[0]).hypot(next[1] - cur[1]);
                cur = next;
                if moved < tol {
                    break;
                }
            }
            cur
        })
        .collect();

    // Merge in input order: each converged position joins the first mode
    // within bandwidth / 2, so labels are numbered by first occurrence.
    let merge = bandwidth / 2.0;
    let mut modes: Vec<[f64; 2]> = Vec::new();
    let mut members: Vec<Vec<[f64; 2]>> = Vec::new();
    let mut labels = BTreeMap::new();
    for (point, c) in embedding.points.iter().zip(&converged) {
        let found = modes
            .iter()
            .position(|m| (m[0] - c[0]).hypot(m[1] - c[1]) <= merge);
        let label = match found {
            Some(l) => {
                members[l].push(*c);
                l
            }
            None => {
                modes.push(*c);
                members.push(vec![*c]);
                modes.len() - 1
            }
        };
        labels.insert(point.id.clone(), label);
    }
    for (m, ms) in modes.iter_mut().zip(&members) {
        let n = ms.len() as f64;
        *m = [ms.iter().map(|p| p[0]).sum::<f64>() / n, ms.iter().map(|p| p[1]).sum::<f64>() / n];
    }

    Ok(ClusterAssignment {
        labels,
        modes,
        bandwidth,
    })
}

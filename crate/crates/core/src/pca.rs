//! Principal component analysis.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;

/// Linear projection onto the top principal axes of a training corpus.
///
/// Parameters are held at `f32` precision so that a model written to disk and
/// read back behaves bit-identically to the one that was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(with = "crate::blob")]
    pub mean: Vec<f32>,
    /// Row-major `output_dim x input_dim`, rows orthonormal.
    #[serde(with = "crate::blob")]
    pub basis: Vec<f32>,
    /// Eigenvalues matching the basis rows, non-increasing.
    #[serde(with = "crate::blob")]
    pub variances: Vec<f32>,
}

impl PcaModel {
    pub fn identity(dim: usize) -> Self {
        let mut basis = vec![0.0; dim * dim];
        for i in 0..dim {
            basis[i * dim + i] = 1.0;
        }
        Self {
            input_dim: dim,
            output_dim: dim,
            mean: vec![0.0; dim],
            basis,
            variances: vec![1.0; dim],
        }
    }

    pub fn basis_row(&self, r: usize) -> &[f32] {
        &self.basis[r * self.input_dim..(r + 1) * self.input_dim]
    }

    /// Centers and rotates `x` into the principal axes.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        let centered: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .map(|(v, m)| v - *m as f64)
            .collect();
        Ok((0..self.output_dim)
            .map(|r| {
                self.basis_row(r)
                    .iter()
                    .zip(&centered)
                    .map(|(b, c)| *b as f64 * c)
                    .sum()
            })
            .collect())
    }

    /// Maps principal-axis coordinates back to input space.
    pub fn inverse_transform(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim,
                found: y.len(),
            });
        }
        let mut out: Vec<f64> = self.mean.iter().map(|m| *m as f64).collect();
        for (r, coef) in y.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.basis_row(r)) {
                *o += coef * *b as f64;
            }
        }
        Ok(out)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let ok = self.mean.len() == self.input_dim
            && self.basis.len() == self.input_dim * self.output_dim
            && self.variances.len() == self.output_dim
            && self.output_dim <= self.input_dim
            && self.output_dim > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::malformed("PCA model arrays do not match its dimensions"))
        }
    }
}

/// Fits a PCA model keeping the `output_dim` directions of largest variance.
///
/// The covariance uses the `1/n` normalization. Each basis row is signed so
/// that its largest-magnitude component is positive (first such component on
/// ties), which makes the fit reproducible.
pub fn fit_pca(data: &FeatureSet, output_dim: usize) -> Result<PcaModel> {
    let input_dim = data.dim().ok_or(Error::Empty("PCA training set"))?;
    if output_dim == 0 || output_dim > input_dim {
        return Err(Error::invalid(format!(
            "output dimension {output_dim} must be in 1..={input_dim}"
        )));
    }
    if data.len() < output_dim {
        return Err(Error::InsufficientData {
            needed: output_dim,
            got: data.len(),
        });
    }

    let n = data.len();
    let mut mean = vec![0.0f64; input_dim];
    for v in data {
        for (m, x) in mean.iter_mut().zip(&v.values) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let centered = DMatrix::from_fn(n, input_dim, |r, c| data.vectors()[r].values[c] - mean[c]);
    let cov = (centered.transpose() * &centered) / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..input_dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut basis = Vec::with_capacity(output_dim * input_dim);
    let mut variances = Vec::with_capacity(output_dim);
    for &col in order.iter().take(output_dim) {
        let v = eig.eigenvectors.column(col);
        let mut pivot = 0;
        for i in 1..input_dim {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        basis.extend(v.iter().map(|x| (sign * x) as f32));
        variances.push(eig.eigenvalues[col].max(0.0) as f32);
    }

    Ok(PcaModel {
        input_dim,
        output_dim,
        mean: mean.iter().map(|m| *m as f32).collect(),
        basis,
        variances,
    })
}

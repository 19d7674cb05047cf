//! The full feature transform: center, rotate, permute, then L2 normalize.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{l2_normalize, FeatureSet, FeatureVector};
use crate::pca::{fit_pca, PcaModel};
use crate::permutation::{fit_permutation, PermutationPlan};

/// A trained PCA model paired with its permutation plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    pub pca: PcaModel,
    pub plan: PermutationPlan,
}

impl Projector {
    pub fn new(pca: PcaModel, plan: PermutationPlan) -> Result<Self> {
        let p = Self { pca, plan };
        p.validate()?;
        Ok(p)
    }

    pub fn identity(dim: usize, num_subvectors: usize) -> Self {
        Self {
            pca: PcaModel::identity(dim),
            plan: PermutationPlan::identity(dim, num_subvectors),
        }
    }

    /// Fits PCA to `output_dim` and a plan balancing `num_subvectors` buckets.
    pub fn fit(data: &FeatureSet, output_dim: usize, num_subvectors: usize) -> Result<Self> {
        let pca = fit_pca(data, output_dim)?;
        let variances: Vec<f64> = pca.variances.iter().map(|v| *v as f64).collect();
        let plan = fit_permutation(&variances, num_subvectors)?;
        Ok(Self { pca, plan })
    }

    pub fn input_dim(&self) -> usize {
        self.pca.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.pca.output_dim
    }

    pub fn project(&self, v: &FeatureVector) -> Result<FeatureVector> {
        project(v, &self.pca, &self.plan)
    }

    pub fn project_set(&self, set: &FeatureSet) -> Result<FeatureSet> {
        set.try_map(|v| self.project(v))
    }

    pub fn validate(&self) -> Result<()> {
        self.pca.validate()?;
        self.plan.validate()?;
        if self.plan.dim() != self.pca.output_dim {
            return Err(Error::malformed(format!(
                "permutation covers {} dimensions, PCA outputs {}",
                self.plan.dim(),
                self.pca.output_dim
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: Self = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_json(path, self)
    }
}

pub fn project(v: &FeatureVector, pca: &PcaModel, plan: &PermutationPlan) -> Result<FeatureVector> {
    let rotated = pca.transform(&v.values)?;
    let permuted = plan.apply(&rotated)?;
    l2_normalize(&FeatureVector {
        id: v.id.clone(),
        values: permuted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, id: &str, d: usize) -> FeatureVector {
        FeatureVector::new(id, (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_pipeline_keeps_unit_vectors() {
        let p = Projector::identity(3, 1);
        let v = FeatureVector::new("u", vec![0.6, 0.0, 0.8]).unwrap();
        let out = p.project(&v).unwrap();
        assert_eq!(out.values, v.values);
        assert_eq!(p.project(&out).unwrap().values, out.values);
    }

    #[test]
    fn mean_projects_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = FeatureSet::new((0..40).map(|i| random_vec(&mut rng, &i.to_string(), 6)).collect()).unwrap();
        let p = Projector::fit(&data, 4, 2).unwrap();
        let mean = FeatureVector::new("m", p.pca.mean.iter().map(|x| *x as f64).collect()).unwrap();
        assert!(matches!(p.project(&mean), Err(Error::ZeroVector)));
    }

    #[test]
    fn matches_direct_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = FeatureSet::new((0..60).map(|i| random_vec(&mut rng, &i.to_string(), 12)).collect()).unwrap();
        let p = Projector::fit(&data, 8, 4).unwrap();
        for t in 0..20 {
            let v = random_vec(&mut rng, &format!("q{t}"), 12);
            let out = p.project(&v).unwrap();

            // oracle: explicit B (v - mean), explicit permutation, explicit norm
            let k = p.pca.output_dim;
            let mut rotated = vec![0.0; k];
            for r in 0..k {
                for c in 0..12 {
                    rotated[r] += p.pca.basis[r * 12 + c] as f64 * (v.values[c] - p.pca.mean[c] as f64);
                }
            }
            let mut permuted = vec![0.0; k];
            for (pos, src) in p.plan.perm.iter().enumerate() {
                permuted[pos] = rotated[*src];
            }
            let norm = permuted.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (a, b) in out.values.iter().zip(&permuted) {
                assert!((a - b / norm).abs() < 1e-6);
            }
            assert!((out.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_projection_preserves_nearest_neighbour() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = Projector::identity(5, 1);
        for _ in 0..50 {
            let pool: Vec<FeatureVector> = (0..10)
                .map(|i| l2_normalize(&random_vec(&mut rng, &i.to_string(), 5)).unwrap())
                .collect();
            let q = l2_normalize(&random_vec(&mut rng, "q", 5)).unwrap();
            let nn = |q: &FeatureVector, pool: &[FeatureVector]| {
                (0..pool.len())
                    .min_by(|&a, &b| {
                        crate::features::l2(&q.values, &pool[a].values)
                            .total_cmp(&crate::features::l2(&q.values, &pool[b].values))
                    })
                    .unwrap()
            };
            let projected: Vec<FeatureVector> = pool.iter().map(|v| p.project(v).unwrap()).collect();
            assert_eq!(nn(&q, &pool), nn(&p.project(&q).unwrap(), &projected));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = Projector::identity(3, 1);
        let v = FeatureVector::new("x", vec![1.0, 2.0]).unwrap();
        assert!(matches!(p.project(&v), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = FeatureSet::new((0..30).map(|i| random_vec(&mut rng, &i.to_string(), 8)).collect()).unwrap();
        let p = Projector::fit(&data, 4, 2).unwrap();
        let text = serde_json::to_string(&p).unwrap();
        let back: Projector = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
    }
}

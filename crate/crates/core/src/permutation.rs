//! Variance-balancing permutation of the principal axes.
//!
//! Product quantization splits a vector into `M` contiguous sub-vectors. After
//! PCA the variance is concentrated in the leading dimensions, so the plan
//! regroups dimensions such that every sub-vector receives a similar share of
//! the total variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationPlan {
    /// Output position `p` takes input dimension `perm[p]`.
    pub perm: Vec<usize>,
    pub num_subvectors: usize,
    pub bucket_variance: Vec<f64>,
}

impl PermutationPlan {
    pub fn identity(dim: usize, num_subvectors: usize) -> Self {
        Self {
            perm: (0..dim).collect(),
            num_subvectors,
            bucket_variance: vec![0.0; num_subvectors],
        }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.perm.len() {
            return Err(Error::DimensionMismatch {
                expected: self.perm.len(),
                found: x.len(),
            });
        }
        Ok(self.perm.iter().map(|&i| x[i]).collect())
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let d = self.perm.len();
        let mut seen = vec![false; d];
        for &p in &self.perm {
            if p >= d || std::mem::replace(&mut seen[p], true) {
                return Err(Error::malformed("permutation is not a bijection"));
            }
        }
        if self.num_subvectors == 0 || d % self.num_subvectors != 0 {
            return Err(Error::malformed("permutation bucket count does not divide dimension"));
        }
        Ok(())
    }
}

/// Greedy longest-processing-time balancing with equal bucket capacities.
///
/// Dimensions are visited by variance, largest first (lowest index on ties),
/// and each goes to the bucket with the smallest running sum among those not
/// yet holding `d / M` dimensions (lowest bucket on ties). Bucket `b` then
/// occupies output positions `[b * d / M, (b + 1) * d / M)` in assignment
/// order.
pub fn fit_permutation(variances: &[f64], num_subvectors: usize) -> Result<PermutationPlan> {
    let d = variances.len();
    if num_subvectors == 0 || d == 0 || d % num_subvectors != 0 {
        return Err(Error::invalid(format!(
            "dimension {d} is not divisible into {num_subvectors} sub-vectors"
        )));
    }
    let capacity = d / num_subvectors;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]).then(a.cmp(&b)));

    let mut buckets: Vec<Vec<usize>> = vec![Vec::with_capacity(capacity); num_subvectors];
    let mut sums = vec![0.0f64; num_subvectors];
    for dim in order {
        let target = (0..num_subvectors)
            .filter(|&b| buckets[b].len() < capacity)
            .min_by(|&a, &b| sums[a].total_cmp(&sums[b]).then(a.cmp(&b)))
            .expect("total capacity equals dimension");
        buckets[target].push(dim);
        sums[target] += variances[dim];
    }

    Ok(PermutationPlan {
        perm: buckets.into_iter().flatten().collect(),
        num_subvectors,
        bucket_variance: sums,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bucket_values(plan: &PermutationPlan, variances: &[f64]) -> Vec<Vec<f64>> {
        let cap = plan.dim() / plan.num_subvectors;
        plan.perm
            .chunks(cap)
            .map(|c| c.iter().map(|&i| variances[i]).collect())
            .collect()
    }

    #[test]
    fn four_dims_two_buckets_balance_exactly() {
        let v = [4.0, 3.0, 2.0, 1.0];
        let plan = fit_permutation(&v, 2).unwrap();
        assert_eq!(bucket_values(&plan, &v), vec![vec![4.0, 1.0], vec![3.0, 2.0]]);
        assert_eq!(plan.bucket_variance, vec![5.0, 5.0]);
    }

    #[test]
    fn equal_variances_give_equal_sums() {
        let plan = fit_permutation(&[1.5; 16], 4).unwrap();
        assert!(plan.bucket_variance.iter().all(|s| *s == 6.0));
    }

    #[test]
    fn six_dims_greedy_trace() {
        // 8->b0 (8), 5->b1 (5), 4->b1 (9), 2->b0 (10), 2->b1 (11, full), 1->b0 (11)
        let v = [8.0, 5.0, 4.0, 2.0, 2.0, 1.0];
        let plan = fit_permutation(&v, 2).unwrap();
        assert_eq!(plan.bucket_variance, vec![11.0, 11.0]);
        assert_eq!(bucket_values(&plan, &v), vec![vec![8.0, 2.0, 1.0], vec![5.0, 4.0, 2.0]]);
    }

    #[test]
    fn indivisible_dimension_is_rejected() {
        assert!(fit_permutation(&[1.0; 5], 2).is_err());
        assert!(fit_permutation(&[1.0; 4], 0).is_err());
    }

    proptest! {
        #[test]
        fn greedy_bound_and_bijection(
            m in 1usize..6,
            per in 1usize..6,
            seed in prop::collection::vec(0.0f64..100.0, 36)
        ) {
            let v: Vec<f64> = seed.into_iter().take(m * per).collect();
            prop_assume!(v.len() == m * per);
            let plan = fit_permutation(&v, m).unwrap();
            plan.validate().unwrap();
            let max = plan.bucket_variance.iter().cloned().fold(f64::MIN, f64::max);
            let min = plan.bucket_variance.iter().cloned().fold(f64::MAX, f64::min);
            let biggest = v.iter().cloned().fold(0.0, f64::max);
            prop_assert!(max - min <= biggest + 1e-9);
        }
    }
}

//! Feature vectors and ordered feature sets.
//!
//! A [`FeatureSet`] keeps its members in the order they were ingested; for
//! image result sets that order is the original relevance ranking, and the
//! layout strategies rely on it.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub id: String,
    #[serde(rename = "vec")]
    pub values: Vec<f64>,
}

impl FeatureVector {
    /// Builds a vector after checking that it is non-empty and finite.
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if values.is_empty() {
            return Err(Error::malformed(format!("vector {id:?} has dimension 0")));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { id, index });
        }
        Ok(Self { id, values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Ordered collection of equally sized vectors with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    vectors: Vec<FeatureVector>,
}

impl FeatureSet {
    pub fn new(vectors: Vec<FeatureVector>) -> Result<Self> {
        if let Some(first) = vectors.first() {
            let dim = first.dim();
            let mut seen = HashSet::with_capacity(vectors.len());
            for v in &vectors {
                if v.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: v.dim(),
                    });
                }
                if !seen.insert(v.id.as_str()) {
                    return Err(Error::DuplicateId(v.id.clone()));
                }
            }
        }
        Ok(Self { vectors })
    }

    /// Dimension shared by all members, `None` for an empty set.
    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(FeatureVector::dim)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[FeatureVector] {
        &self.vectors
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FeatureVector> {
        self.vectors.iter()
    }

    pub fn get(&self, id: &str) -> Option<&FeatureVector> {
        self.vectors.iter().find(|v| v.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.vectors.iter().position(|v| v.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.vectors.iter().map(|v| v.id.as_str())
    }

    pub fn into_vectors(self) -> Vec<FeatureVector> {
        self.vectors
    }

    /// Applies `f` to every member, keeping ids and order.
    pub fn try_map(&self, mut f: impl FnMut(&FeatureVector) -> Result<FeatureVector>) -> Result<Self> {
        let vectors = self.vectors.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        Self::new(vectors)
    }

    pub(crate) fn require_dim(&self, dim: usize) -> Result<()> {
        match self.dim() {
            Some(d) if d != dim => Err(Error::DimensionMismatch {
                expected: dim,
                found: d,
            }),
            _ => Ok(()),
        }
    }
}

impl<'a> IntoIterator for &'a FeatureSet {
    type Item = &'a FeatureVector;
    type IntoIter = std::slice::Iter<'a, FeatureVector>;

    fn into_iter(self) -> Self::IntoIter {
        self.vectors.iter()
    }
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize(v: &FeatureVector) -> Result<FeatureVector> {
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(FeatureVector {
        id: v.id.clone(),
        values: v.values.iter().map(|x| x / norm).collect(),
    })
}

pub fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    squared_l2(a, b).sqrt()
}

/// Total order on ids used for every "lowest id wins" tie break.
///
/// Ids that are both plain decimal integers compare numerically, so row-index
/// ids ("2" < "10") order the way they were written; everything else compares
/// as strings.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    let numeric = |s: &str| !s.is_empty() && s.bytes().all(|c| c.is_ascii_digit());
    if numeric(a) && numeric(b) {
        let ta = a.trim_start_matches('0');
        let tb = b.trim_start_matches('0');
        ta.len()
            .cmp(&tb.len())
            .then_with(|| ta.cmp(tb))
            .then_with(|| a.cmp(b))
    } else {
        a.cmp(b)
    }
}

/// Ascending by distance, ties by lowest id.
pub(crate) fn by_distance_then_id(da: f64, ida: &str, db: f64, idb: &str) -> Ordering {
    da.total_cmp(&db).then_with(|| compare_ids(ida, idb))
}

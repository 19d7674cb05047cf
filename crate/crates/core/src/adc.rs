//! Asymmetric distance computation: an uncompressed query against stored codes.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::features::squared_l2;
use crate::lopq::{CompressedCode, LopqModel, SUB_CENTROIDS};

/// Per-query lookup tables.
///
/// For a coarse cell `(l, r)` the table holds, for every sub-vector `m` and
/// sub-centroid `j`, the squared distance between the `m`-th slice of
/// `query - coarse(l, r)` and centroid `j`. Summing one entry per sub-vector
/// gives the squared distance to the code's reconstruction. Tables are built
/// lazily the first time a cell is seen.
#[derive(Debug, Clone)]
pub struct AdcTables {
    query: Vec<f64>,
    cells: HashMap<(u32, u32), Vec<f64>>,
}

impl AdcTables {
    pub fn new(query: &[f64], model: &LopqModel) -> Result<Self> {
        if query.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: query.len(),
            });
        }
        Ok(Self {
            query: query.to_vec(),
            cells: HashMap::new(),
        })
    }

    pub fn query(&self) -> &[f64] {
        &self.query
    }

    fn table(&mut self, left: u32, right: u32, model: &LopqModel) -> &[f64] {
        let query = &self.query;
        self.cells.entry((left, right)).or_insert_with(|| {
            let coarse = model.coarse.centroid(left, right);
            let residual: Vec<f64> = query.iter().zip(&coarse).map(|(q, c)| q - c).collect();
            let pq = model.cell_pq(left, right);
            let s = pq.sub_dim();
            let mut table = Vec::with_capacity(pq.num_subvectors * SUB_CENTROIDS);
            for (cb, part) in pq.sub_codebooks.iter().zip(residual.chunks_exact(s)) {
                for c in cb.centroids.chunks_exact(s) {
                    table.push(
                        part.iter()
                            .zip(c)
                            .map(|(a, b)| {
                                let t = a - *b as f64;
                                t * t
                            })
                            .sum(),
                    );
                }
            }
            table
        })
    }

    pub fn distance(&mut self, code: &CompressedCode, model: &LopqModel) -> Result<f64> {
        model.check_code(code)?;
        let table = self.table(code.coarse_left, code.coarse_right, model);
        Ok(code
            .sub_codes
            .iter()
            .enumerate()
            .map(|(m, &c)| table[m * SUB_CENTROIDS + c as usize])
            .sum())
    }
}

/// Squared Euclidean distance between `query` and the reconstruction of
/// `code`, through `tables` when the caller supplies them.
pub fn adc_distance(
    query: &[f64],
    code: &CompressedCode,
    model: &LopqModel,
    tables: Option<&mut AdcTables>,
) -> Result<f64> {
    if query.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: query.len(),
        });
    }
    match tables {
        Some(t) => {
            if t.query() != query {
                return Err(Error::invalid("lookup tables were built for a different query"));
            }
            t.distance(code, model)
        }
        None => Ok(squared_l2(query, &model.reconstruct(code)?)),
    }
}

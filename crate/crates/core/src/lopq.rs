//! Two-level compact codes: a coarse quantizer over the two halves of the
//! vector plus product-quantized residuals.
//!
//! A code holds two coarse indices of `b` bits each and `M` one-byte
//! sub-codes, `8M + 2b` bits in total. Residual sub-codebooks are shared
//! across coarse cells by default; with `per_cell` enabled, cells that hold
//! enough training residuals get private sub-codebooks.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSet, FeatureVector};
use crate::kmeans::{fit_kmeans, KMeansCodebook, DEFAULT_MAX_ITERS};
use crate::projection::Projector;

pub const SUB_CENTROIDS: usize = 256;
pub const MAX_COARSE_BITS: u8 = 16;
/// Residuals a coarse cell needs before it gets private sub-codebooks.
pub const PER_CELL_MIN_RESIDUALS: usize = SUB_CENTROIDS * 4;

pub fn code_size_bits(bits: u8, num_subvectors: usize) -> usize {
    num_subvectors * 8 + 2 * bits as usize
}

/// Bytes one serialized code occupies: the packed coarse pair plus `M` bytes.
pub fn code_size_bytes(bits: u8, num_subvectors: usize) -> usize {
    code_size_bits(bits, num_subvectors).div_ceil(8)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompressedCode {
    pub coarse_left: u32,
    pub coarse_right: u32,
    pub sub_codes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseQuantizer {
    pub bits: u8,
    pub left: KMeansCodebook,
    pub right: KMeansCodebook,
}

impl CoarseQuantizer {
    pub fn half_dim(&self) -> usize {
        self.left.dim
    }

    pub fn cells_per_half(&self) -> usize {
        1usize << self.bits
    }

    /// Nearest left and right centroid indices for `x`.
    pub fn assign(&self, x: &[f64]) -> (u32, u32) {
        let h = self.half_dim();
        (self.left.nearest(&x[..h]).0 as u32, self.right.nearest(&x[h..]).0 as u32)
    }

    /// Concatenation of the two coarse centroids.
    pub fn centroid(&self, left: u32, right: u32) -> Vec<f64> {
        self.left
            .centroid(left as usize)
            .iter()
            .chain(self.right.centroid(right as usize))
            .map(|v| *v as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqModel {
    pub num_subvectors: usize,
    pub sub_codebooks: Vec<KMeansCodebook>,
}

impl PqModel {
    pub fn sub_dim(&self) -> usize {
        self.sub_codebooks[0].dim
    }

    pub fn encode(&self, residual: &[f64]) -> Vec<u8> {
        let s = self.sub_dim();
        self.sub_codebooks
            .iter()
            .zip(residual.chunks_exact(s))
            .map(|(cb, part)| cb.nearest(part).0 as u8)
            .collect()
    }

    pub fn decode_into(&self, sub_codes: &[u8], out: &mut [f64]) {
        let s = self.sub_dim();
        for ((cb, &c), part) in self.sub_codebooks.iter().zip(sub_codes).zip(out.chunks_exact_mut(s)) {
            for (o, v) in part.iter_mut().zip(cb.centroid(c as usize)) {
                *o += *v as f64;
            }
        }
    }

    fn fit(residuals: &[f64], dim: usize, num_subvectors: usize, max_iters: usize, seed: u64) -> Result<Self> {
        let s = dim / num_subvectors;
        let n = residuals.len() / dim;
        let sub_codebooks = (0..num_subvectors)
            .map(|m| {
                let mut part = Vec::with_capacity(n * s);
                for row in residuals.chunks_exact(dim) {
                    part.extend_from_slice(&row[m * s..(m + 1) * s]);
                }
                fit_kmeans(&part, s, SUB_CENTROIDS, max_iters, seed.wrapping_add(m as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            num_subvectors,
            sub_codebooks,
        })
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.num_subvectors == 0
            || dim % self.num_subvectors != 0
            || self.sub_codebooks.len() != self.num_subvectors
        {
            return Err(Error::malformed("PQ sub-codebook count does not match dimension"));
        }
        for cb in &self.sub_codebooks {
            cb.validate()?;
            if cb.k != SUB_CENTROIDS || cb.dim != dim / self.num_subvectors {
                return Err(Error::malformed("PQ sub-codebook has the wrong shape"));
            }
        }
        Ok(())
    }
}

/// Private sub-codebooks for one populated coarse cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCodebooks {
    pub left: u32,
    pub right: u32,
    pub pq: PqModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LopqConfig {
    /// Bits per coarse half; each half has `2^bits` centroids.
    pub bits: u8,
    pub num_subvectors: usize,
    pub per_cell: bool,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for LopqConfig {
    fn default() -> Self {
        Self {
            bits: 13,
            num_subvectors: 16,
            per_cell: false,
            seed: 0,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// Trained compaction model, including the feature projection it was fit in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LopqModel {
    #[serde(flatten)]
    pub projector: Projector,
    pub coarse: CoarseQuantizer,
    pub pq: PqModel,
    #[serde(default)]
    pub per_cell: bool,
    /// Sorted by `(left, right)`.
    #[serde(default)]
    pub cells: Vec<CellCodebooks>,
}

impl LopqModel {
    pub fn dim(&self) -> usize {
        self.coarse.half_dim() * 2
    }

    pub fn bits(&self) -> u8 {
        self.coarse.bits
    }

    pub fn num_subvectors(&self) -> usize {
        self.pq.num_subvectors
    }

    pub fn code_size_bits(&self) -> usize {
        code_size_bits(self.bits(), self.num_subvectors())
    }

    /// Residual codebooks used for a coarse cell.
    pub fn cell_pq(&self, left: u32, right: u32) -> &PqModel {
        if self.per_cell {
            if let Ok(i) = self
                .cells
                .binary_search_by(|c| (c.left, c.right).cmp(&(left, right)))
            {
                return &self.cells[i].pq;
            }
        }
        &self.pq
    }

    pub fn project(&self, v: &FeatureVector) -> Result<FeatureVector> {
        self.projector.project(v)
    }

    pub fn encode(&self, v: &FeatureVector) -> Result<CompressedCode> {
        encode(v, self)
    }

    pub fn reconstruct(&self, code: &CompressedCode) -> Result<Vec<f64>> {
        reconstruct(code, self)
    }

    pub fn check_code(&self, code: &CompressedCode) -> Result<()> {
        let cells = self.coarse.cells_per_half();
        for idx in [code.coarse_left, code.coarse_right] {
            if idx as usize >= cells {
                return Err(Error::IndexOutOfRange {
                    what: "coarse codebook",
                    index: idx as usize,
                    len: cells,
                });
            }
        }
        if code.sub_codes.len() != self.num_subvectors() {
            return Err(Error::IndexOutOfRange {
                what: "sub-code list",
                index: code.sub_codes.len(),
                len: self.num_subvectors(),
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.projector.validate()?;
        let d = self.dim();
        if self.projector.output_dim() != d {
            return Err(Error::malformed(format!(
                "projection outputs {} dimensions, quantizer expects {d}",
                self.projector.output_dim()
            )));
        }
        if self.coarse.bits > MAX_COARSE_BITS {
            return Err(Error::malformed("coarse bits out of range"));
        }
        for cb in [&self.coarse.left, &self.coarse.right] {
            cb.validate()?;
            if cb.k != self.coarse.cells_per_half() || cb.dim * 2 != d {
                return Err(Error::malformed("coarse codebook has the wrong shape"));
            }
        }
        self.pq.validate(d)?;
        for cell in &self.cells {
            cell.pq.validate(d)?;
            if cell.pq.num_subvectors != self.pq.num_subvectors {
                return Err(Error::malformed("per-cell codebooks disagree on M"));
            }
        }
        if !self
            .cells
            .windows(2)
            .all(|w| (w[0].left, w[0].right) < (w[1].left, w[1].right))
        {
            return Err(Error::malformed("per-cell codebooks are not sorted"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_json(path, self)
    }
}

/// Trains coarse and residual codebooks on already projected vectors.
///
/// The two coarse halves are trained independently. Residuals are taken
/// against the concatenated coarse centroids of each vector's cell.
pub fn fit_lopq(training: &FeatureSet, projector: Projector, config: &LopqConfig) -> Result<LopqModel> {
    let d = training.dim().ok_or(Error::Empty("LOPQ training set"))?;
    if d != projector.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: projector.output_dim(),
            found: d,
        });
    }
    if d % 2 != 0 {
        return Err(Error::invalid(format!("dimension {d} cannot be split into halves")));
    }
    let m = config.num_subvectors;
    if m == 0 || d % m != 0 {
        return Err(Error::invalid(format!("M = {m} does not divide dimension {d}")));
    }
    if config.bits > MAX_COARSE_BITS {
        return Err(Error::invalid(format!("at most {MAX_COARSE_BITS} coarse bits are supported")));
    }
    let n = training.len();
    let cells = 1usize << config.bits;
    let needed = cells.max(SUB_CENTROIDS);
    if n < needed {
        return Err(Error::InsufficientData { needed, got: n });
    }

    let h = d / 2;
    let mut left = Vec::with_capacity(n * h);
    let mut right = Vec::with_capacity(n * h);
    for v in training {
        left.extend_from_slice(&v.values[..h]);
        right.extend_from_slice(&v.values[h..]);
    }
    let seed = config.seed;
    let coarse = CoarseQuantizer {
        bits: config.bits,
        left: fit_kmeans(&left, h, cells, config.max_iters, seed)?,
        right: fit_kmeans(&right, h, cells, config.max_iters, seed.wrapping_add(1))?,
    };

    let mut residuals = Vec::with_capacity(n * d);
    let mut assignments = Vec::with_capacity(n);
    for v in training {
        let (l, r) = coarse.assign(&v.values);
        let c = coarse.centroid(l, r);
        residuals.extend(v.values.iter().zip(&c).map(|(x, y)| x - y));
        assignments.push((l, r));
    }
    let pq = PqModel::fit(&residuals, d, m, config.max_iters, seed.wrapping_add(2))?;

    let mut cell_books = Vec::new();
    if config.per_cell {
        let mut members: std::collections::BTreeMap<(u32, u32), Vec<usize>> = Default::default();
        for (i, a) in assignments.iter().enumerate() {
            members.entry(*a).or_default().push(i);
        }
        for ((l, r), rows) in members {
            if rows.len() < PER_CELL_MIN_RESIDUALS {
                continue;
            }
            let mut local = Vec::with_capacity(rows.len() * d);
            for i in rows {
                local.extend_from_slice(&residuals[i * d..(i + 1) * d]);
            }
            let cell_seed = seed
                .wrapping_add(1000)
                .wrapping_add(((l as u64) << 20) | r as u64);
            cell_books.push(CellCodebooks {
                left: l,
                right: r,
                pq: PqModel::fit(&local, d, m, config.max_iters, cell_seed)?,
            });
        }
    }

    let model = LopqModel {
        projector,
        coarse,
        pq,
        per_cell: config.per_cell,
        cells: cell_books,
    };
    model.validate()?;
    Ok(model)
}

/// Nearest coarse pair, then nearest sub-centroid per residual sub-vector;
/// lowest index wins ties at every stage.
pub fn encode(v: &FeatureVector, model: &LopqModel) -> Result<CompressedCode> {
    let d = model.dim();
    if v.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: v.dim(),
        });
    }
    let (l, r) = model.coarse.assign(&v.values);
    let c = model.coarse.centroid(l, r);
    let residual: Vec<f64> = v.values.iter().zip(&c).map(|(x, y)| x - y).collect();
    Ok(CompressedCode {
        coarse_left: l,
        coarse_right: r,
        sub_codes: model.cell_pq(l, r).encode(&residual),
    })
}

pub fn reconstruct(code: &CompressedCode, model: &LopqModel) -> Result<Vec<f64>> {
    model.check_code(code)?;
    let mut out = model.coarse.centroid(code.coarse_left, code.coarse_right);
    model
        .cell_pq(code.coarse_left, code.coarse_right)
        .decode_into(&code.sub_codes, &mut out);
    Ok(out)
}

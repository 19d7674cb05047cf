//! Ranking candidate ads by their dissimilarity to an image result set.
//!
//! Two vector-to-set dissimilarities are supported: the minimum distance to
//! any image ([`Mode::Min`]) and the sum of distances to all images
//! ([`Mode::Sum`], the default). Distances are Euclidean.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{by_distance_then_id, l2, FeatureSet, FeatureVector};
use crate::lopq::{CompressedCode, LopqModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Min,
    #[default]
    Sum,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Mode::Min),
            "sum" => Ok(Mode::Sum),
            other => Err(Error::invalid(format!("unknown selection mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdCandidate {
    pub id: String,
    pub feature: FeatureVector,
    pub code: Option<CompressedCode>,
}

impl From<FeatureVector> for AdCandidate {
    fn from(feature: FeatureVector) -> Self {
        Self {
            id: feature.id.clone(),
            feature,
            code: None,
        }
    }
}

/// Which representation of the images distances are measured against.
///
/// Ads are always used uncompressed.
#[derive(Debug, Clone, Copy)]
pub enum ImageSpace<'a> {
    Exact,
    /// Images are replaced by the reconstructions of their codes, given in
    /// the same order as the image set.
    Compressed {
        codes: &'a [CompressedCode],
        model: &'a LopqModel,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAd {
    pub id: String,
    pub dissimilarity: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NearestAd {
    pub image: String,
    pub ad: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub mode: Mode,
    pub chosen: Option<String>,
    pub reciprocal: bool,
    pub ranking: Vec<RankedAd>,
    pub per_image_nearest_ad: Vec<NearestAd>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionConfig {
    pub mode: Mode,
    pub k: usize,
    pub require_reciprocity: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Sum,
            k: 1,
            require_reciprocity: false,
        }
    }
}

pub fn set_dissimilarity(ad: &FeatureVector, images: &FeatureSet, mode: Mode) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Empty("image set"));
    }
    images.require_dim(ad.dim())?;
    let dists = images.iter().map(|i| l2(&ad.values, &i.values));
    Ok(match mode {
        Mode::Min => dists.fold(f64::INFINITY, f64::min),
        Mode::Sum => dists.sum(),
    })
}

/// Image features as seen in the requested space.
pub fn effective_images(images: &FeatureSet, space: ImageSpace<'_>) -> Result<FeatureSet> {
    match space {
        ImageSpace::Exact => Ok(images.clone()),
        ImageSpace::Compressed { codes, model } => {
            if codes.len() != images.len() {
                return Err(Error::invalid(format!(
                    "{} images but {} codes",
                    images.len(),
                    codes.len()
                )));
            }
            images.require_dim(model.dim())?;
            let rebuilt = images
                .iter()
                .zip(codes)
                .map(|(img, code)| {
                    Ok(FeatureVector {
                        id: img.id.clone(),
                        values: model.reconstruct(code)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            FeatureSet::new(rebuilt)
        }
    }
}

/// Ad-by-image Euclidean distance matrix plus the derived nearest-neighbour
/// relations in both directions.
struct DistanceTable<'a> {
    ads: &'a [AdCandidate],
    images: &'a FeatureSet,
    /// Row-major `ads.len() x images.len()`.
    dist: Vec<f64>,
}

impl<'a> DistanceTable<'a> {
    fn new(ads: &'a [AdCandidate], images: &'a FeatureSet) -> Result<Self> {
        if ads.is_empty() {
            return Err(Error::Empty("ad pool"));
        }
        if images.is_empty() {
            return Err(Error::Empty("image set"));
        }
        let dim = images.dim().expect("non-empty");
        let mut seen = HashSet::new();
        for ad in ads {
            if ad.feature.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: ad.feature.dim(),
                });
            }
            if !seen.insert(ad.id.as_str()) {
                return Err(Error::DuplicateId(ad.id.clone()));
            }
        }
        let dist = ads
            .par_iter()
            .flat_map_iter(|ad| images.iter().map(move |img| l2(&ad.feature.values, &img.values)))
            .collect();
        Ok(Self { ads, images, dist })
    }

    fn row(&self, a: usize) -> &[f64] {
        let n = self.images.len();
        &self.dist[a * n..(a + 1) * n]
    }

    fn dissimilarity(&self, a: usize, mode: Mode) -> f64 {
        match mode {
            Mode::Min => self.row(a).iter().copied().fold(f64::INFINITY, f64::min),
            Mode::Sum => self.row(a).iter().sum(),
        }
    }

    fn nearest_image(&self, a: usize) -> usize {
        let imgs = self.images.vectors();
        let row = self.row(a);
        (0..imgs.len())
            .min_by(|&x, &y| by_distance_then_id(row[x], &imgs[x].id, row[y], &imgs[y].id))
            .expect("non-empty")
    }

    fn nearest_ad(&self, i: usize) -> usize {
        let n = self.images.len();
        (0..self.ads.len())
            .min_by(|&x, &y| {
                by_distance_then_id(self.dist[x * n + i], &self.ads[x].id, self.dist[y * n + i], &self.ads[y].id)
            })
            .expect("non-empty")
    }

    fn reciprocal(&self, a: usize) -> bool {
        self.nearest_ad(self.nearest_image(a)) == a
    }
}

/// Sorts every ad by dissimilarity to the image set (ascending, lowest id on
/// ties) and records the nearest ad of each image along the way.
pub fn rank_ads(
    ads: &[AdCandidate],
    images: &FeatureSet,
    mode: Mode,
    space: ImageSpace<'_>,
) -> Result<SelectionOutcome> {
    let images = effective_images(images, space)?;
    let table = DistanceTable::new(ads, &images)?;

    let scores: Vec<f64> = (0..ads.len()).map(|a| table.dissimilarity(a, mode)).collect();
    let mut order: Vec<usize> = (0..ads.len()).collect();
    order.sort_by(|&x, &y| by_distance_then_id(scores[x], &ads[x].id, scores[y], &ads[y].id));

    let per_image_nearest_ad = images
        .iter()
        .enumerate()
        .map(|(i, img)| NearestAd {
            image: img.id.clone(),
            ad: ads[table.nearest_ad(i)].id.clone(),
        })
        .collect();

    Ok(SelectionOutcome {
        mode,
        chosen: Some(ads[order[0]].id.clone()),
        reciprocal: table.reciprocal(order[0]),
        ranking: order
            .iter()
            .map(|&a| RankedAd {
                id: ads[a].id.clone(),
                dissimilarity: scores[a],
            })
            .collect(),
        per_image_nearest_ad,
    })
}

/// True when the image nearest to `chosen` has `chosen` as its nearest ad.
pub fn reciprocity_check(chosen: &str, ads: &[AdCandidate], images: &FeatureSet) -> Result<bool> {
    let a = ads
        .iter()
        .position(|ad| ad.id == chosen)
        .ok_or_else(|| Error::UnknownId(chosen.to_owned()))?;
    Ok(DistanceTable::new(ads, images)?.reciprocal(a))
}

/// Top-`k` ads with the optional reciprocity gate on the winner.
///
/// When the gate is on and the winner fails it, `chosen` is cleared; the
/// ranking is still reported.
pub fn select_ads(
    ads: &[AdCandidate],
    images: &FeatureSet,
    config: &SelectionConfig,
    space: ImageSpace<'_>,
) -> Result<SelectionOutcome> {
    if config.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut outcome = rank_ads(ads, images, config.mode, space)?;
    outcome.ranking.truncate(config.k);
    if config.require_reciprocity && !outcome.reciprocal {
        outcome.chosen = None;
    }
    Ok(outcome)
}

/// Ranking order as ids, for comparisons that ignore the scores.
pub fn ranked_ids(outcome: &SelectionOutcome) -> Vec<&str> {
    outcome.ranking.iter().map(|r| r.id.as_str()).collect()
}

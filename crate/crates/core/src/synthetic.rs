//! Synthetic benchmark corpus shaped like a small topical ad inventory.
//!
//! Every topic is a Gaussian cluster around its own centre. Ads are drawn
//! around the topic centre; each query picks one topic, draws a query centre
//! near the topic centre and then draws its result images around that. A
//! separate training pool, drawn the same way as images, is used to fit the
//! projection and quantizer.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSet, FeatureVector};
use crate::io::{load_features, save_features, write_ids};

pub const DEFAULT_TOPICS: [(&str, usize); 5] = [("animals", 23), ("cars", 48), ("fashion", 45), ("movies", 16), ("tv", 18)];

pub const ADS_FILE: &str = "ads.vff";
pub const ADS_IDS_FILE: &str = "ads.ids";
pub const IMAGES_FILE: &str = "images.vff";
pub const IMAGES_IDS_FILE: &str = "images.ids";
pub const TRAIN_FILE: &str = "train.vff";
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub name: String,
    pub ads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub topics: Vec<TopicSpec>,
    pub images_per_query: usize,
    pub queries: usize,
    pub dim: usize,
    /// Norm of each topic centre.
    pub separation: f64,
    /// Spread (expected norm of the offset) of ads around their topic centre.
    pub ad_spread: f64,
    /// Spread of query centres around the topic centre.
    pub query_spread: f64,
    /// Spread of result images around their query centre.
    pub image_spread: f64,
    pub train_size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            topics: DEFAULT_TOPICS
                .iter()
                .map(|(name, ads)| TopicSpec {
                    name: name.to_string(),
                    ads: *ads,
                })
                .collect(),
            images_per_query: 24,
            queries: 100,
            dim: 128,
            separation: 1.0,
            ad_spread: 0.5,
            query_spread: 0.3,
            image_spread: 0.4,
            train_size: 4096,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn total_ads(&self) -> usize {
        self.topics.iter().map(|t| t.ads).sum()
    }

    fn validate(&self) -> Result<()> {
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return Err(Error::invalid(format!("separation must be positive, got {}", self.separation)));
        }
        for (what, v) in [
            ("ad_spread", self.ad_spread),
            ("query_spread", self.query_spread),
            ("image_spread", self.image_spread),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{what} must be non-negative, got {v}")));
            }
        }
        if self.topics.is_empty() {
            return Err(Error::invalid("at least one topic is required"));
        }
        if self.topics.iter().any(|t| t.ads == 0) {
            return Err(Error::invalid("every topic needs at least one ad"));
        }
        if self.dim == 0 || self.images_per_query == 0 {
            return Err(Error::invalid("dim and images_per_query must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTruth {
    pub id: String,
    pub topic: String,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SyntheticConfig,
    /// Ad id to topic name.
    pub ad_topics: std::collections::BTreeMap<String, String>,
    pub queries: Vec<QueryTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub ads: FeatureSet,
    /// All result images of all queries, query by query.
    pub images: FeatureSet,
    pub train: FeatureSet,
    pub truth: GroundTruth,
}

impl SyntheticDataset {
    /// The result images of one query.
    pub fn query_images(&self, query: &QueryTruth) -> Result<FeatureSet> {
        let vs = query
            .images
            .iter()
            .map(|id| self.images.get(id).cloned().ok_or_else(|| Error::UnknownId(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        FeatureSet::new(vs)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_features(&dir.join(ADS_FILE), &self.ads)?;
        write_ids(File::create(dir.join(ADS_IDS_FILE))?, &self.ads)?;
        save_features(&dir.join(IMAGES_FILE), &self.images)?;
        write_ids(File::create(dir.join(IMAGES_IDS_FILE))?, &self.images)?;
        save_features(&dir.join(TRAIN_FILE), &self.train)?;
        crate::write_json(&dir.join(TRUTH_FILE), &self.truth)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let truth: GroundTruth = serde_json::from_reader(BufReader::new(File::open(dir.join(TRUTH_FILE))?))?;
        Ok(Self {
            ads: load_features(&dir.join(ADS_FILE), Some(&dir.join(ADS_IDS_FILE)))?,
            images: load_features(&dir.join(IMAGES_FILE), Some(&dir.join(IMAGES_IDS_FILE)))?,
            train: load_features(&dir.join(TRAIN_FILE), None)?,
            truth,
        })
    }
}

/// Isotropic Gaussian offset with expected norm close to `spread`, rounded
/// to f32 so that in-memory data equals what the binary files store.
fn around(rng: &mut ChaCha8Rng, center: &[f64], spread: f64) -> Vec<f64> {
    let scale = spread / (center.len() as f64).sqrt();
    center
        .iter()
        .map(|c| {
            let z: f64 = rng.sample(StandardNormal);
            (c + scale * z) as f32 as f64
        })
        .collect()
}

pub fn gen_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.dim;
    let origin = vec![0.0; d];
    let centers: Vec<Vec<f64>> = config
        .topics
        .iter()
        .map(|_| around(&mut rng, &origin, config.separation))
        .collect();

    let mut ads = Vec::with_capacity(config.total_ads());
    let mut ad_topics = std::collections::BTreeMap::new();
    for (t, topic) in config.topics.iter().enumerate() {
        for k in 0..topic.ads {
            let id = format!("ad_{}_{k:03}", topic.name);
            ads.push(FeatureVector::new(id.clone(), around(&mut rng, &centers[t], config.ad_spread))?);
            ad_topics.insert(id, topic.name.clone());
        }
    }

    let mut images = Vec::with_capacity(config.queries * config.images_per_query);
    let mut queries = Vec::with_capacity(config.queries);
    for q in 0..config.queries {
        let t = q % config.topics.len();
        let qc = around(&mut rng, &centers[t], config.query_spread);
        let id = format!("q{q:03}");
        let mut ids = Vec::with_capacity(config.images_per_query);
        for i in 0..config.images_per_query {
            let img = format!("{id}_{i:02}");
            images.push(FeatureVector::new(img.clone(), around(&mut rng, &qc, config.image_spread))?);
            ids.push(img);
        }
        queries.push(QueryTruth {
            id,
            topic: config.topics[t].name.clone(),
            images: ids,
        });
    }

    let mut train = Vec::with_capacity(config.train_size);
    for i in 0..config.train_size {
        let t = rng.gen_range(0..config.topics.len());
        let qc = around(&mut rng, &centers[t], config.query_spread);
        train.push(FeatureVector::new(i.to_string(), around(&mut rng, &qc, config.image_spread))?);
    }

    Ok(SyntheticDataset {
        ads: FeatureSet::new(ads)?,
        images: FeatureSet::new(images)?,
        train: FeatureSet::new(train)?,
        truth: GroundTruth {
            config: config.clone(),
            ad_topics,
            queries,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            queries: 7,
            images_per_query: 5,
            dim: 16,
            train_size: 50,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn corpus_shape_matches_topic_table() {
        let cfg = SyntheticConfig::default();
        assert_eq!(cfg.total_ads(), 150);
        let ds = gen_synthetic(&small()).unwrap();
        assert_eq!(ds.ads.len(), 150);
        assert_eq!(ds.images.len(), 35);
        assert_eq!(ds.truth.queries.len(), 7);
        assert_eq!(ds.truth.queries[6].topic, "cars");
        assert_eq!(ds.truth.ad_topics.values().filter(|t| *t == "movies").count(), 16);
        assert_eq!(ds.query_images(&ds.truth.queries[2]).unwrap().len(), 5);
    }

    #[test]
    fn seeded_output_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_synthetic(&small()).unwrap().write(a.path()).unwrap();
        gen_synthetic(&small()).unwrap().write(b.path()).unwrap();
        for f in [ADS_FILE, ADS_IDS_FILE, IMAGES_FILE, IMAGES_IDS_FILE, TRAIN_FILE, TRUTH_FILE] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let other = SyntheticConfig { seed: 10, ..small() };
        assert_ne!(gen_synthetic(&other).unwrap().ads, gen_synthetic(&small()).unwrap().ads);
    }

    #[test]
    fn round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_synthetic(&small()).unwrap();
        ds.write(dir.path()).unwrap();
        assert_eq!(SyntheticDataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn rejects_zero_separation() {
        let cfg = SyntheticConfig { separation: 0.0, ..small() };
        assert!(matches!(gen_synthetic(&cfg), Err(Error::InvalidArgument(_))));
    }
}

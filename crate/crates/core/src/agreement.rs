//! How often compressed image features pick the same ad as exact ones.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::lopq::LopqModel;
use crate::projection::Projector;
use crate::selection::{rank_ads, AdCandidate, ImageSpace, Mode};
use crate::synthetic::SyntheticDataset;

/// What the compressed path sees in place of an already projected image.
pub trait ImageCodec: Sync {
    fn round_trip(&self, v: &FeatureVector) -> Result<FeatureVector>;
}

impl ImageCodec for LopqModel {
    fn round_trip(&self, v: &FeatureVector) -> Result<FeatureVector> {
        Ok(FeatureVector {
            id: v.id.clone(),
            values: self.reconstruct(&self.encode(v)?)?,
        })
    }
}

/// Lossless stand-in: reconstruction equals the input.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl ImageCodec for IdentityCodec {
    fn round_trip(&self, v: &FeatureVector) -> Result<FeatureVector> {
        Ok(v.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub per_topic: BTreeMap<String, f64>,
    pub overall: f64,
    pub num_queries: usize,
    /// Share of queries whose exact-space choice belongs to the query's topic.
    pub topic_hit_rate: f64,
}

#[derive(Debug, Clone)]
struct QueryResult {
    topic: String,
    agree: bool,
    topic_hit: bool,
}

/// Agreement with the model's own projection and codes, sum-mode selection.
pub fn eval_agreement(dataset: &SyntheticDataset, model: &LopqModel, queries: usize) -> Result<AgreementReport> {
    eval_agreement_with(dataset, &model.projector, model, Mode::Sum, queries)
}

/// Runs selection twice for each of the first `queries` queries, once on the
/// projected images and once on their codec round trips, with the projected
/// ads uncompressed both times, and scores whether the winners match.
pub fn eval_agreement_with(
    dataset: &SyntheticDataset,
    projector: &Projector,
    codec: &dyn ImageCodec,
    mode: Mode,
    queries: usize,
) -> Result<AgreementReport> {
    let available = dataset.truth.queries.len();
    if queries == 0 || queries > available {
        return Err(Error::invalid(format!(
            "asked for {queries} queries, dataset has {available}"
        )));
    }
    if let Some(d) = dataset.ads.dim() {
        if d != projector.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: projector.input_dim(),
                found: d,
            });
        }
    }
    let ads: Vec<AdCandidate> = projector
        .project_set(&dataset.ads)?
        .into_vectors()
        .into_iter()
        .map(AdCandidate::from)
        .collect();

    let results = dataset.truth.queries[..queries]
        .par_iter()
        .map(|q| {
            let exact = projector.project_set(&dataset.query_images(q)?)?;
            let compressed = exact.try_map(|v| codec.round_trip(v))?;
            let a = rank_ads(&ads, &exact, mode, ImageSpace::Exact)?.chosen;
            let b = rank_ads(&ads, &compressed, mode, ImageSpace::Exact)?.chosen;
            let topic_hit = a
                .as_ref()
                .and_then(|id| dataset.truth.ad_topics.get(id))
                .is_some_and(|t| *t == q.topic);
            Ok(QueryResult {
                topic: q.topic.clone(),
                agree: a == b,
                topic_hit,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(summarize(&results))
}

fn summarize(results: &[QueryResult]) -> AgreementReport {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in results {
        let e = tally.entry(r.topic.clone()).or_default();
        e.0 += r.agree as usize;
        e.1 += 1;
    }
    let n = results.len();
    AgreementReport {
        per_topic: tally
            .into_iter()
            .map(|(t, (hit, total))| (t, hit as f64 / total as f64))
            .collect(),
        overall: results.iter().filter(|r| r.agree).count() as f64 / n as f64,
        num_queries: n,
        topic_hit_rate: results.iter().filter(|r| r.topic_hit).count() as f64 / n as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gen_synthetic, SyntheticConfig};

    fn dataset() -> SyntheticDataset {
        gen_synthetic(&SyntheticConfig {
            queries: 10,
            images_per_query: 6,
            dim: 16,
            train_size: 20,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn lossless_codec_agrees_everywhere() {
        let ds = dataset();
        let r = eval_agreement_with(&ds, &Projector::identity(16, 4), &IdentityCodec, Mode::Sum, 10).unwrap();
        assert_eq!(r.overall, 1.0);
        assert!(r.per_topic.values().all(|v| *v == 1.0));
        assert_eq!(r.num_queries, 10);
        assert_eq!(r.per_topic.len(), 5);
    }

    #[test]
    fn overall_is_mean_of_queries() {
        let rs: Vec<QueryResult> = [("a", true), ("a", false), ("b", true), ("a", true)]
            .iter()
            .map(|(t, ok)| QueryResult {
                topic: t.to_string(),
                agree: *ok,
                topic_hit: true,
            })
            .collect();
        let r = summarize(&rs);
        assert_eq!(r.overall, 0.75);
        assert!((r.per_topic["a"] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_topic["b"], 1.0);
    }

    #[test]
    fn argument_errors() {
        let ds = dataset();
        assert!(eval_agreement_with(&ds, &Projector::identity(16, 4), &IdentityCodec, Mode::Sum, 11).is_err());
        assert!(matches!(
            eval_agreement_with(&ds, &Projector::identity(8, 4), &IdentityCodec, Mode::Sum, 5),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}

//! End-to-end driver: load features, project, optionally compress, select an
//! ad, embed and cluster when the strategy needs it, and place everything on
//! the grid.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codes::read_codes;
use crate::error::{Error, Result};
use crate::features::{FeatureSet, FeatureVector};
use crate::io::load_features;
use crate::layout::{
    diversify_by_cluster, place_clustered, place_greedy_2d_multi, place_local_1d, place_local_2d,
    place_preserve_order, rejection_checks, Connectivity, LayoutResult, Strategy,
};
use crate::lopq::{CompressedCode, LopqModel};
use crate::meanshift::{estimate_bandwidth, mean_shift, ClusterAssignment, DEFAULT_BANDWIDTH_FRACTION};
use crate::projection::Projector;
use crate::selection::{effective_images, select_ads, AdCandidate, ImageSpace, Mode, SelectionConfig, SelectionOutcome};
use crate::tsne::{tsne_embed, Embedding2D, TsneConfig, DEFAULT_ITERATIONS};

fn default_cols() -> usize {
    5
}

fn default_k() -> usize {
    1
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

fn default_fraction() -> f64 {
    DEFAULT_BANDWIDTH_FRACTION
}

/// Run description, read from JSON. Relative paths are resolved against the
/// manifest's directory by [`PipelineManifest::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineManifest {
    /// Free-form label of the text query that produced the result set.
    #[serde(default)]
    pub query_label: String,
    #[serde(default)]
    pub topic: Option<String>,
    pub images: PathBuf,
    #[serde(default)]
    pub image_ids: Option<PathBuf>,
    pub ads: PathBuf,
    #[serde(default)]
    pub ad_ids: Option<PathBuf>,
    /// A projector or a full LOPQ model; without one, features are used as
    /// given.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Precomputed `VCC1` codes of the images, in image order. When
    /// `use_codes` is set and this is absent, the images are encoded on the
    /// fly.
    #[serde(default)]
    pub image_codes: Option<PathBuf>,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_cols")]
    pub cols: usize,
    #[serde(default)]
    pub rows: Option<usize>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub reciprocity: bool,
    /// On a failed reciprocity test, retry once without the failing ad.
    #[serde(default)]
    pub retry: bool,
    #[serde(default)]
    pub use_codes: bool,
    #[serde(default)]
    pub hull_check: bool,
    #[serde(default)]
    pub cluster_cap: Option<usize>,
    #[serde(default)]
    pub perplexity: Option<f64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_fraction")]
    pub bandwidth_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_strategy() -> Strategy {
    Strategy::Preserve
}

impl PipelineManifest {
    pub fn new(images: impl Into<PathBuf>, ads: impl Into<PathBuf>) -> Self {
        Self {
            query_label: String::new(),
            topic: None,
            images: images.into(),
            image_ids: None,
            ads: ads.into(),
            ad_ids: None,
            model: None,
            image_codes: None,
            strategy: default_strategy(),
            mode: Mode::default(),
            cols: default_cols(),
            rows: None,
            k: default_k(),
            reciprocity: false,
            retry: false,
            use_codes: false,
            hull_check: false,
            cluster_cap: None,
            perplexity: None,
            iterations: default_iterations(),
            bandwidth_fraction: default_fraction(),
            seed: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut m: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut m.images);
        fix(&mut m.ads);
        for p in [&mut m.image_ids, &mut m.ad_ids, &mut m.model, &mut m.image_codes]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        Ok(m)
    }
}

/// Either half of the training output.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Projector(Projector),
    Lopq(Box<LopqModel>),
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if value.get("coarse").is_some() {
            let m: LopqModel = serde_json::from_value(value)?;
            m.validate()?;
            Ok(ModelFile::Lopq(Box::new(m)))
        } else {
            let p: Projector = serde_json::from_value(value)?;
            p.validate()?;
            Ok(ModelFile::Projector(p))
        }
    }

    pub fn projector(&self) -> &Projector {
        match self {
            ModelFile::Projector(p) => p,
            ModelFile::Lopq(m) => &m.projector,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub query_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    pub selection: SelectionOutcome,
    pub layout: LayoutResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding2D>,
}

/// In-memory inputs of a run.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub images: FeatureSet,
    pub ads: FeatureSet,
    pub model: Option<ModelFile>,
    pub image_codes: Option<Vec<CompressedCode>>,
}

impl PipelineInputs {
    pub fn load(manifest: &PipelineManifest) -> Result<Self> {
        Ok(Self {
            images: load_features(&manifest.images, manifest.image_ids.as_deref())?,
            ads: load_features(&manifest.ads, manifest.ad_ids.as_deref())?,
            model: manifest.model.as_deref().map(ModelFile::load).transpose()?,
            image_codes: manifest
                .image_codes
                .as_deref()
                .map(|p| read_codes(BufReader::new(File::open(p)?)).map(|f| f.codes))
                .transpose()?,
        })
    }
}

pub fn run_pipeline(manifest: &PipelineManifest) -> Result<PipelineOutput> {
    run_with_inputs(manifest, PipelineInputs::load(manifest)?)
}

pub fn run_with_inputs(manifest: &PipelineManifest, inputs: PipelineInputs) -> Result<PipelineOutput> {
    if manifest.cols == 0 {
        return Err(Error::invalid("cols must be at least 1"));
    }
    let (images, ads) = match &inputs.model {
        Some(m) => (m.projector().project_set(&inputs.images)?, m.projector().project_set(&inputs.ads)?),
        None => (inputs.images, inputs.ads),
    };
    if images.is_empty() {
        return Err(Error::Empty("image set"));
    }

    let lopq = match &inputs.model {
        Some(ModelFile::Lopq(m)) => Some(m.as_ref()),
        _ => None,
    };
    let codes: Option<Vec<CompressedCode>> = if manifest.use_codes {
        let model = lopq.ok_or_else(|| Error::invalid("use_codes needs a trained LOPQ model"))?;
        Some(match inputs.image_codes {
            Some(c) => c,
            None => images.iter().map(|v| model.encode(v)).collect::<Result<_>>()?,
        })
    } else {
        None
    };
    let space = match (&codes, lopq) {
        (Some(codes), Some(model)) => ImageSpace::Compressed { codes, model },
        _ => ImageSpace::Exact,
    };

    let mut candidates: Vec<AdCandidate> = ads.into_vectors().into_iter().map(AdCandidate::from).collect();
    let config = SelectionConfig {
        mode: manifest.mode,
        k: manifest.k,
        require_reciprocity: manifest.reciprocity,
    };
    let mut selection = select_ads(&candidates, &images, &config, space)?;
    if selection.chosen.is_none() && manifest.retry && candidates.len() > 1 {
        let failed = selection.ranking[0].id.clone();
        log::info!("ad {failed} failed the reciprocity test, retrying without it");
        candidates.retain(|c| c.id != failed);
        selection = select_ads(&candidates, &images, &config, space)?;
    }

    let output = |selection: SelectionOutcome, layout: LayoutResult, embedding: Option<Embedding2D>| PipelineOutput {
        query_label: manifest.query_label.clone(),
        topic: manifest.topic.clone(),
        selection,
        layout,
        embedding,
    };

    let Some(chosen) = selection.chosen.clone() else {
        let layout = LayoutResult::rejected(manifest.strategy, "reciprocity");
        return Ok(output(selection, layout, None));
    };
    let ad_ids: Vec<String> = selection.ranking.iter().map(|r| r.id.clone()).collect();
    let ad = candidates
        .iter()
        .find(|c| c.id == chosen)
        .cloned()
        .expect("chosen ad is a candidate");

    // Layout operates in the same space as selection.
    let mut view = effective_images(&images, space)?;
    let needs_embedding = manifest.strategy.needs_embedding() || manifest.cluster_cap.is_some();
    let mut embedding = None;
    let mut clusters: Option<ClusterAssignment> = None;
    if needs_embedding {
        let placed_ads: Vec<&str> = if manifest.strategy == Strategy::Greedy2d {
            ad_ids.iter().map(String::as_str).collect()
        } else {
            vec![chosen.as_str()]
        };
        let mut joint = view.vectors().to_vec();
        for id in &placed_ads {
            let c = candidates.iter().find(|c| c.id == *id).expect("ranked ad is a candidate");
            joint.push(c.feature.clone());
        }
        let joint = FeatureSet::new(joint)?;
        let tsne = TsneConfig {
            perplexity: manifest.perplexity,
            iterations: manifest.iterations,
            seed: manifest.seed,
        };
        let emb = tsne_embed(&joint, &tsne)?;
        let bw = estimate_bandwidth(&emb, manifest.bandwidth_fraction)?;
        let cl = mean_shift(&emb, bw)?;

        if manifest.strategy.needs_embedding() {
            if let Some(reason) = rejection_checks(&emb, &cl, &chosen, manifest.hull_check)? {
                let layout = LayoutResult::rejected(manifest.strategy, reason.as_str()).with_clusters(cl);
                return Ok(output(selection, layout, Some(emb)));
            }
        }

        if let Some(cap) = manifest.cluster_cap {
            view = diversify_by_cluster(&view, &cl, cap)?;
            let keep = |id: &str| view.get(id).is_some() || placed_ads.contains(&id);
            let emb_kept = Embedding2D {
                points: emb.points.iter().filter(|p| keep(&p.id)).cloned().collect(),
                kl_trace: emb.kl_trace.clone(),
            };
            let mut cl_kept = cl.clone();
            cl_kept.labels.retain(|id, _| keep(id));
            embedding = Some(emb_kept);
            clusters = Some(cl_kept);
        } else {
            embedding = Some(emb);
            clusters = Some(cl);
        }
    }

    let n_items = match (&embedding, manifest.strategy.needs_embedding()) {
        (Some(e), true) => e.len(),
        _ => view.len() + 1,
    };
    let rows = manifest.rows.unwrap_or_else(|| n_items.div_ceil(manifest.cols));
    let mut layout = match manifest.strategy {
        Strategy::Preserve => place_preserve_order(&view, &ad, manifest.cols)?,
        Strategy::Local1d => place_local_1d(&view, &ad, manifest.cols)?,
        Strategy::Local2d4 => place_local_2d(&view, &ad, manifest.cols, Connectivity::Four)?,
        Strategy::Local2d8 => place_local_2d(&view, &ad, manifest.cols, Connectivity::Eight)?,
        Strategy::Greedy2d => {
            let emb = embedding.as_ref().expect("embedding computed");
            place_greedy_2d_multi(emb, &ad_ids, rows, manifest.cols)?
        }
        Strategy::Clustered => {
            let emb = embedding.as_ref().expect("embedding computed");
            let cl = clusters.as_ref().expect("clusters computed");
            place_clustered(emb, cl, &chosen, rows, manifest.cols)?
        }
    };
    if manifest.k > 1 && manifest.strategy != Strategy::Greedy2d {
        layout.note = Some(format!(
            "{} ads ranked; only the top ad is placed by the {} strategy",
            ad_ids.len(),
            manifest.strategy
        ));
    }
    if layout.clusters.is_none() {
        layout.clusters = clusters;
    }
    Ok(output(selection, layout, embedding))
}

/// Convenience for tests and callers that build features in memory.
pub fn run_in_memory(
    manifest: &PipelineManifest,
    images: Vec<FeatureVector>,
    ads: Vec<FeatureVector>,
) -> Result<PipelineOutput> {
    run_with_inputs(
        manifest,
        PipelineInputs {
            images: FeatureSet::new(images)?,
            ads: FeatureSet::new(ads)?,
            model: None,
            image_codes: None,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::save_features;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(id: &str, v: &[f64]) -> FeatureVector {
        FeatureVector::new(id, v.to_vec()).unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, prefix: &str, n: usize, center: f64) -> Vec<FeatureVector> {
        (0..n)
            .map(|i| fv(&format!("{prefix}{i}"), &(0..6).map(|_| center + rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect()
    }

    #[test]
    fn single_image_preserve() {
        let m = PipelineManifest { cols: 3, ..PipelineManifest::new("i", "a") };
        let out = run_in_memory(&m, vec![fv("img", &[1.0, 0.0])], vec![fv("ad", &[0.0, 1.0])]).unwrap();
        let g = out.layout.grid.unwrap();
        assert_eq!((g.rows, g.cols), (1, 3));
        assert_eq!(g.reading_order(), ["img", "ad"]);
        assert_eq!(out.selection.chosen.as_deref(), Some("ad"));
    }

    #[test]
    fn manifest_paths_resolve_and_output_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let images = FeatureSet::new(random_set(&mut rng, "i", 12, 0.0)).unwrap();
        let ads = FeatureSet::new(random_set(&mut rng, "a", 30, 0.2)).unwrap();
        save_features(&dir.path().join("images.jsonl"), &images).unwrap();
        save_features(&dir.path().join("ads.jsonl"), &ads).unwrap();
        let manifest = serde_json::json!({
            "query_label": "red cars",
            "images": "images.jsonl",
            "ads": "ads.jsonl",
            "strategy": "clustered",
            "cols": 4,
            "seed": 5
        });
        let path = dir.path().join("m.json");
        std::fs::write(&path, manifest.to_string()).unwrap();
        let m = PipelineManifest::load(&path).unwrap();
        assert!(m.images.is_absolute() || m.images.starts_with(dir.path()));
        let a = crate::to_json_string(&run_pipeline(&m).unwrap()).unwrap();
        let b = crate::to_json_string(&run_pipeline(&m).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reciprocity_failure_is_a_rejection() {
        // mid is best by sum but no image has it as nearest ad
        let images = vec![fv("i0", &[0.0, 0.0]), fv("i1", &[10.0, 0.0])];
        let ads = vec![fv("mid", &[5.0, 0.0]), fv("near0", &[0.1, 3.0]), fv("near10", &[9.9, 3.0])];
        let m = PipelineManifest {
            reciprocity: true,
            ..PipelineManifest::new("i", "a")
        };
        let out = run_in_memory(&m, images.clone(), ads.clone()).unwrap();
        assert!(out.layout.rejected);
        assert_eq!(out.layout.reason.as_deref(), Some("reciprocity"));
        assert!(out.layout.grid.is_none());

        let retry = PipelineManifest { retry: true, ..m };
        let out = run_in_memory(&retry, images, ads).unwrap();
        assert!(!out.layout.rejected);
        assert!(out.selection.reciprocal);
    }

    #[test]
    fn isolated_ad_is_rejected_by_embedding_strategies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let images = random_set(&mut rng, "i", 15, 0.0);
        let ads = vec![fv("far", &[40.0; 6])];
        let m = PipelineManifest {
            strategy: Strategy::Greedy2d,
            ..PipelineManifest::new("i", "a")
        };
        let out = run_in_memory(&m, images, ads).unwrap();
        assert!(out.layout.rejected);
        assert_eq!(out.layout.reason.as_deref(), Some("singleton-cluster"));
        assert!(out.layout.clusters.is_some());
    }

    #[test]
    fn every_strategy_places_all_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let images = random_set(&mut rng, "i", 14, 0.0);
        let ads = random_set(&mut rng, "a", 20, 0.0);
        for strategy in Strategy::ALL {
            let m = PipelineManifest {
                strategy,
                cols: 4,
                bandwidth_fraction: 0.5,
                ..PipelineManifest::new("i", "a")
            };
            let out = run_in_memory(&m, images.clone(), ads.clone()).unwrap();
            if out.layout.rejected {
                assert!(strategy.needs_embedding(), "{strategy} rejected");
                continue;
            }
            let g = out.layout.grid.unwrap();
            assert_eq!(g.cells.len(), 15, "{strategy}");
            assert_eq!(g.ad_ids(), [out.selection.chosen.as_deref().unwrap()]);
        }
    }

    #[test]
    fn top_k_greedy_places_every_ranked_ad() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let images = random_set(&mut rng, "i", 14, 0.0);
        let ads = random_set(&mut rng, "a", 20, 0.0);
        let m = PipelineManifest {
            strategy: Strategy::Greedy2d,
            k: 2,
            cols: 4,
            bandwidth_fraction: 0.6,
            ..PipelineManifest::new("i", "a")
        };
        let out = run_in_memory(&m, images, ads).unwrap();
        assert!(!out.layout.rejected, "{:?}", out.layout.reason);
        assert_eq!(out.layout.grid.unwrap().ad_ids().len(), 2);
    }

    #[test]
    fn use_codes_without_model_is_an_error() {
        let m = PipelineManifest {
            use_codes: true,
            ..PipelineManifest::new("i", "a")
        };
        assert!(run_in_memory(&m, vec![fv("i", &[1.0])], vec![fv("a", &[1.0])]).is_err());
    }
}

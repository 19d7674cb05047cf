//! `adgrid` command-line driver.
//!
//! Exit status: 0 on success (a rejected placement is a success), 1 on usage
//! errors and invalid argument values, 2 on data errors.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use adgrid::agreement::{eval_agreement, eval_agreement_with, IdentityCodec};
use adgrid::codes::{write_codes, CodeFile};
use adgrid::io::load_features;
use adgrid::layout::{LayoutResult, Strategy};
use adgrid::kmeans::DEFAULT_MAX_ITERS;
use adgrid::lopq::{fit_lopq, LopqConfig};
use adgrid::pipeline::{run_pipeline, PipelineManifest, PipelineOutput};
use adgrid::render::render_html;
use adgrid::selection::Mode;
use adgrid::synthetic::{gen_synthetic, SyntheticConfig, SyntheticDataset, TopicSpec};
use adgrid::{write_json, LopqModel, Projector};
use anyhow::Context;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adgrid", version, about = "Visually congruent ad selection and grid placement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit PCA and the sub-vector balancing permutation.
    TrainPca(TrainPcaArgs),
    /// Fit the coarse and residual codebooks.
    TrainLopq(TrainLopqArgs),
    /// Encode features into a VCC1 code file.
    Encode(EncodeArgs),
    /// Rank the ad pool against a result set.
    Select(ManifestArgs),
    /// Run selection and grid placement.
    Place(ManifestArgs),
    /// Render a placement as a static HTML page.
    Render(RenderArgs),
    /// Write a synthetic topical ad corpus with result sets.
    GenSynthetic(GenArgs),
    /// Measure how often compressed images pick the same ad as exact ones.
    EvalAgreement(EvalArgs),
}

#[derive(Args)]
struct FeatureInput {
    /// Feature file (VFF1 binary, or JSON lines for .jsonl).
    #[arg(long)]
    features: PathBuf,
    /// Sidecar id list for a binary feature file.
    #[arg(long)]
    ids: Option<PathBuf>,
}

#[derive(Args)]
struct TrainPcaArgs {
    #[command(flatten)]
    input: FeatureInput,
    /// Output dimension.
    #[arg(long, default_value_t = 128)]
    dim: usize,
    /// Number of sub-vectors the permutation balances.
    #[arg(long, short = 'm', default_value_t = 16)]
    subvectors: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainLopqArgs {
    #[command(flatten)]
    input: FeatureInput,
    /// Projector from `train-pca`; fitted here when absent.
    #[arg(long)]
    projector: Option<PathBuf>,
    /// Output dimension when fitting the projection here.
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, short = 'm', default_value_t = 16)]
    subvectors: usize,
    /// Bits per coarse half.
    #[arg(long, short = 'b', default_value_t = 13)]
    bits: u8,
    /// Train per-cell residual codebooks where a cell has enough data.
    #[arg(long)]
    per_cell: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    input: FeatureInput,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ManifestArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Overrides the manifest's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Output of `place`, or a bare layout.
    #[arg(long)]
    layout: PathBuf,
    /// Directory holding `<id>.<ext>` image files.
    #[arg(long)]
    image_dir: Option<PathBuf>,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// Comma-separated `name:ads` pairs.
    #[arg(long, default_value = "animals:23,cars:48,fashion:45,movies:16,tv:18")]
    topics: String,
    #[arg(long, default_value_t = 24)]
    images_per_query: usize,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().separation)]
    separation: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().train_size)]
    train_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `gen-synthetic`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, default_value = "sum")]
    mode: Mode,
    /// Skip the codes: images are compared against themselves.
    #[arg(long)]
    lossless: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Bad invocation that clap cannot detect on its own.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_input(input: &FeatureInput) -> anyhow::Result<adgrid::FeatureSet> {
    load_features(&input.features, input.ids.as_deref())
        .with_context(|| format!("reading {}", input.features.display()))
}

fn load_manifest(args: &ManifestArgs) -> anyhow::Result<PipelineManifest> {
    let mut m = PipelineManifest::load(&args.manifest)
        .with_context(|| format!("reading manifest {}", args.manifest.display()))?;
    if let Some(seed) = args.seed {
        m.seed = seed;
    }
    Ok(m)
}

fn parse_topics(list: &str) -> anyhow::Result<Vec<TopicSpec>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (name, ads) = pair
                .split_once(':')
                .ok_or_else(|| usage(format!("topic {pair:?} is not name:count")))?;
            let ads = ads
                .trim()
                .parse()
                .map_err(|_| usage(format!("bad ad count in {pair:?}")))?;
            Ok(TopicSpec {
                name: name.trim().to_string(),
                ads,
            })
        })
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::TrainPca(a) => {
            let data = load_input(&a.input)?;
            let p = Projector::fit(&data, a.dim, a.subvectors)?;
            p.save(&a.out)?;
            log::info!("wrote projector {} -> {} to {}", p.input_dim(), p.output_dim(), a.out.display());
        }
        Command::TrainLopq(a) => {
            let data = load_input(&a.input)?;
            let projector = match &a.projector {
                Some(p) => Projector::load(p).with_context(|| format!("reading {}", p.display()))?,
                None => Projector::fit(&data, a.dim, a.subvectors)?,
            };
            let projected = projector.project_set(&data)?;
            let config = LopqConfig {
                bits: a.bits,
                num_subvectors: a.subvectors,
                per_cell: a.per_cell,
                seed: a.seed,
                max_iters: a.max_iters,
            };
            let model = fit_lopq(&projected, projector, &config)?;
            model.save(&a.out)?;
            log::info!("wrote {}-bit codes model to {}", model.code_size_bits(), a.out.display());
        }
        Command::Encode(a) => {
            let data = load_input(&a.input)?;
            let model = LopqModel::load(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
            let codes = data
                .iter()
                .map(|v| model.encode(&model.project(v)?))
                .collect::<adgrid::Result<Vec<_>>>()?;
            let m = u8::try_from(model.num_subvectors()).map_err(|_| usage("M does not fit the code file header"))?;
            let file = CodeFile {
                num_subvectors: m,
                bits: model.bits(),
                codes,
            };
            write_codes(BufWriter::new(File::create(&a.out)?), &file)?;
        }
        Command::Select(a) => {
            let mut m = load_manifest(&a)?;
            // Selection alone never needs the embedding.
            m.strategy = Strategy::Preserve;
            m.cluster_cap = None;
            let out = run_pipeline(&m)?;
            write_json(&a.out, &out.selection)?;
        }
        Command::Place(a) => {
            let m = load_manifest(&a)?;
            let out = run_pipeline(&m)?;
            if let Some(reason) = &out.layout.reason {
                log::warn!("placement rejected: {reason}");
            }
            write_json(&a.out, &out)?;
        }
        Command::Render(a) => {
            let value: serde_json::Value = serde_json::from_reader(BufReader::new(
                File::open(&a.layout).with_context(|| format!("reading {}", a.layout.display()))?,
            ))?;
            let (layout, label): (LayoutResult, String) = if value.get("layout").is_some() {
                let out: PipelineOutput = serde_json::from_value(value)?;
                (out.layout, out.query_label)
            } else {
                (serde_json::from_value(value)?, String::new())
            };
            let title = a.title.unwrap_or(if label.is_empty() { "Result grid".into() } else { label });
            let page = render_html(&layout, &title, a.image_dir.as_deref())?;
            for w in &page.warnings {
                eprintln!("warning: {w}");
            }
            std::fs::write(&a.out, page.html)?;
        }
        Command::GenSynthetic(a) => {
            let config = SyntheticConfig {
                topics: parse_topics(&a.topics)?,
                images_per_query: a.images_per_query,
                queries: a.queries,
                dim: a.dim,
                separation: a.separation,
                train_size: a.train_size,
                seed: a.seed,
                ..SyntheticConfig::default()
            };
            gen_synthetic(&config)?.write(&a.out)?;
        }
        Command::EvalAgreement(a) => {
            let data = SyntheticDataset::load(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
            let model = LopqModel::load(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
            let report = if a.lossless {
                eval_agreement_with(&data, &model.projector, &IdentityCodec, a.mode, a.queries)?
            } else if a.mode == Mode::Sum {
                eval_agreement(&data, &model, a.queries)?
            } else {
                eval_agreement_with(&data, &model.projector, &model, a.mode, a.queries)?
            };
            write_json(&a.out, &report)?;
            println!("overall agreement {:.3} over {} queries", report.overall, report.num_queries);
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let invalid_argument = matches!(err.downcast_ref::<adgrid::Error>(), Some(adgrid::Error::InvalidArgument(_)));
    if err.downcast_ref::<UsageError>().is_some() || invalid_argument {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

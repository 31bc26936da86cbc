//! `lmret` command line: one subcommand per pipeline stage, each writing a
//! run manifest next to its output.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::catalog::{load_catalog, split_stats};
use crate::embeddings::{load_embeddings, EmbeddingMatrix};
use crate::eval::{load_predictions, mean_ap_at_100, write_submission, GroundTruth};
use crate::feature_ops::{arcface_logits, arcface_loss_grad, gem_pool, ArcfaceConfig, GemConfig};
use crate::manifest::{manifest_path_for, RunManifest};
use crate::rerank::{rerank_pipeline, PipelineOrder, RerankConfig};
use crate::retrieval::{search_topk, DEFAULT_MEMORY_BUDGET};
use crate::sampler::{sample, SamplerConfig, Strategy};
use crate::synth::{generate_synthetic, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "lmret", version, about = "Landmark retrieval and re-ranking over precomputed embeddings")]
#[command(args_override_self = true)]
pub struct Cli {
    /// key=value file; keys are flag names without the leading dashes.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel stages (0 = all cores). Output does not
    /// depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Write an epoch sampling plan.
    Sample(SampleArgs),
    /// Plain cosine top-k search, written as a submission CSV.
    Search(SearchArgs),
    /// Full re-ranking pipeline, written as a submission CSV.
    Rerank(RerankArgs),
    /// Score a submission against ground truth.
    Evaluate(EvaluateArgs),
    /// Evaluate GeM / ArcFace kernels on literal inputs.
    #[command(subcommand)]
    Kernels(KernelCommand),
    /// Per-split catalog counts as JSON.
    Stats(StatsArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub landmarks: usize,
    #[arg(long, default_value_t = 10)]
    pub train_per_landmark: usize,
    #[arg(long, default_value_t = 5)]
    pub index_per_landmark: usize,
    #[arg(long, default_value_t = 2)]
    pub query_per_landmark: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.2)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.2)]
    pub noisy_fraction: f64,
    #[arg(long, default_value_t = 3)]
    pub countries_per_continent: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    /// id-uniform, softmax or continent-aware
    #[arg(long, default_value = "continent-aware")]
    pub strategy: String,
    #[arg(long, default_value_t = 10_000)]
    pub epoch_size: usize,
    /// Landmark ids per batch (id-uniform).
    #[arg(long, default_value_t = 16)]
    pub p: usize,
    /// Images per id (id-uniform).
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long)]
    pub clean_prob: Option<f64>,
    /// e.g. `Asia=0.5,Europe=0.5`; defaults to the built-in table.
    #[arg(long)]
    pub continent_probs: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SearchArgs {
    #[arg(long)]
    pub queries: PathBuf,
    /// Defaults to the embedding path with extension `.ids`.
    #[arg(long)]
    pub query_ids: Option<PathBuf>,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub index_ids: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RerankArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub query_ids: Option<PathBuf>,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub index_ids: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub train_ids: Option<PathBuf>,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k_tag: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 20)]
    pub k1: usize,
    #[arg(long, default_value_t = 6)]
    pub k2: usize,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    /// kreciprocal_then_tags, tags_only or kreciprocal_only
    #[arg(long, default_value = "kreciprocal_then_tags")]
    pub order: String,
    #[arg(long)]
    pub min_index_tag_sim: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub depth: usize,
    #[arg(long, default_value_t = DEFAULT_MEMORY_BUDGET)]
    pub memory_budget: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Also write the score to this file (with a manifest).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum KernelCommand {
    /// GeM over rows given as `a,b;c,d`.
    Gem {
        #[arg(long)]
        rows: String,
        #[arg(long, default_value_t = 3.0)]
        p: f64,
    },
    /// ArcFace logits, loss and gradient.
    Arcface {
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        /// Class weight rows as `a,b;c,d`.
        #[arg(long, allow_hyphen_values = true)]
        weights: String,
        #[arg(long)]
        target: usize,
        #[arg(long, default_value_t = 30.0)]
        scale: f64,
        #[arg(long, default_value_t = 0.3)]
        margin: f64,
    },
}

/// Runs the tool on `argv` (program name first) and returns the exit code:
/// 0 on success, 2 on usage errors, 1 on runtime or data errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(ConfigError::Usage(msg)) => {
            eprintln!("error: {msg}");
            return 2;
        }
        Err(ConfigError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            1
        }
    }
}

enum ConfigError {
    Usage(String),
    Runtime(anyhow::Error),
}

/// Splices `--key value` pairs from a `--config` file right after the
/// subcommand name, so explicit flags (parsed later) override them.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let mut config = None;
    let mut sub_pos = None;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if a == "--config" {
            config = argv.get(i + 1).map(PathBuf::from);
            i += 1;
        } else if a == "--threads" {
            i += 1;
        } else if !a.starts_with('-') && sub_pos.is_none() {
            sub_pos = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(pos)) = (config, sub_pos) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(ConfigError::Runtime)?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Usage(format!(
                "{}:{}: expected key=value",
                path.display(),
                n + 1
            )));
        };
        let key = k.trim().replace('_', "-");
        extra.push(OsString::from(format!("--{key}")));
        extra.push(OsString::from(v.trim()));
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .context("building worker pool")?;
    pool.install(|| match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Search(a) => cmd_search(a),
        Command::Rerank(a) => cmd_rerank(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Kernels(k) => cmd_kernels(k),
        Command::Stats(a) => cmd_stats(a),
    })
}

fn manifest_for<T: Serialize>(name: &str, args: &T) -> RunManifest {
    let mut m = RunManifest::new(name);
    if let Ok(serde_json::Value::Object(map)) = serde_json::to_value(args) {
        for (k, v) in map {
            let v = match v {
                serde_json::Value::String(s) => s,
                serde_json::Value::Null => continue,
                other => other.to_string(),
            };
            m.set(&k, v);
        }
    }
    m
}

fn ids_path(bin: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| bin.with_extension("ids"))
}

fn load_normalized(
    m: &mut RunManifest,
    bin: &Path,
    ids: &Option<PathBuf>,
) -> anyhow::Result<EmbeddingMatrix> {
    let ids = ids_path(bin, ids);
    m.add_input(bin)?;
    m.add_input(&ids)?;
    let e = load_embeddings(bin, &ids)?;
    Ok(e.normalize_rows()?)
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        n_landmarks: a.landmarks,
        train_per_landmark: a.train_per_landmark,
        index_per_landmark: a.index_per_landmark,
        query_per_landmark: a.query_per_landmark,
        dim: a.dim,
        sigma: a.sigma,
        noisy_fraction: a.noisy_fraction,
        countries_per_continent: a.countries_per_continent,
        seed: a.seed,
        ..Default::default()
    };
    let data = generate_synthetic(&cfg)?;
    data.write(&a.out)?;
    let mut m = manifest_for("synth", &a);
    m.seed = Some(a.seed);
    m.write(&manifest_path_for(&a.out))?;
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> anyhow::Result<()> {
    let strategy: Strategy = a.strategy.parse()?;
    let mut cfg = SamplerConfig {
        epoch_size: a.epoch_size,
        ids_per_batch: a.p,
        images_per_id: a.k,
        seed: a.seed,
        ..Default::default()
    };
    if let Some(p) = a.clean_prob {
        cfg.clean_prob = p;
    }
    if let Some(s) = &a.continent_probs {
        cfg.continent_probs = SamplerConfig::parse_continent_probs(s)?;
    }
    let mut m = manifest_for("sample", &a);
    m.seed = Some(a.seed);
    m.set("clean_prob", cfg.clean_prob);
    m.set(
        "continent_probs",
        cfg.continent_probs
            .iter()
            .map(|(c, p)| format!("{c}={p}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    m.add_input(&a.catalog)?;
    m.add_input(&a.mapping)?;
    let catalog = load_catalog(&a.catalog, &a.mapping)?;
    let plan = sample(strategy, &catalog, &cfg)?;
    plan.write(&a.out)?;
    m.write(&manifest_path_for(&a.out))?;
    Ok(())
}

fn cmd_search(a: SearchArgs) -> anyhow::Result<()> {
    let mut m = manifest_for("search", &a);
    let q = load_normalized(&mut m, &a.queries, &a.query_ids)?;
    let idx = load_normalized(&mut m, &a.index, &a.index_ids)?;
    let lists = search_topk(&q, &idx, a.k)?;
    write_submission(&lists, &a.out)?;
    m.write(&manifest_path_for(&a.out))?;
    Ok(())
}

fn cmd_rerank(a: RerankArgs) -> anyhow::Result<()> {
    let order: PipelineOrder = a.order.parse()?;
    let cfg = RerankConfig {
        k_tag: a.k_tag,
        alpha: a.alpha,
        beta: a.beta,
        k1: a.k1,
        k2: a.k2,
        lambda: a.lambda,
        order,
        min_index_tag_sim: a.min_index_tag_sim,
        candidate_depth: a.depth,
        memory_budget: a.memory_budget,
    };
    cfg.validate()?;
    let mut m = manifest_for("rerank", &a);
    let q = load_normalized(&mut m, &a.queries, &a.query_ids)?;
    let idx = load_normalized(&mut m, &a.index, &a.index_ids)?;
    let train = load_normalized(&mut m, &a.train, &a.train_ids)?;
    m.add_input(&a.catalog)?;
    m.add_input(&a.mapping)?;
    let catalog = load_catalog(&a.catalog, &a.mapping)?;
    let lists = rerank_pipeline(&q, &idx, &train, &catalog, &cfg)?;
    write_submission(&lists, &a.out)?;
    m.write(&manifest_path_for(&a.out))?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let pred = load_predictions(&a.pred)?;
    let gt = GroundTruth::load(&a.gt)?;
    let score = mean_ap_at_100(&pred, &gt)?;
    let line = format!("mAP@100 {score:.6}");
    println!("{line}");
    if let Some(out) = &a.out {
        std::fs::write(out, format!("{line}\n")).with_context(|| format!("writing {}", out.display()))?;
        let mut m = manifest_for("evaluate", &a);
        m.add_input(&a.pred)?;
        m.add_input(&a.gt)?;
        m.write(&manifest_path_for(out))?;
    }
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> anyhow::Result<()> {
    let catalog = load_catalog(&a.catalog, &a.mapping)?;
    let json = serde_json::to_string_pretty(&split_stats(&catalog))? + "\n";
    print!("{json}");
    if let Some(out) = &a.out {
        std::fs::write(out, &json).with_context(|| format!("writing {}", out.display()))?;
        let mut m = manifest_for("stats", &a);
        m.add_input(&a.catalog)?;
        m.add_input(&a.mapping)?;
        m.write(&manifest_path_for(out))?;
    }
    Ok(())
}

fn parse_vec(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number `{v}`"))
        })
        .collect()
}

fn parse_rows(s: &str) -> anyhow::Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = s.split(';').map(parse_vec).collect::<anyhow::Result<_>>()?;
    if rows.is_empty() {
        bail!("no rows given");
    }
    Ok(rows)
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ")
}

fn cmd_kernels(k: KernelCommand) -> anyhow::Result<()> {
    match k {
        KernelCommand::Gem { rows, p } => {
            let out = gem_pool(&parse_rows(&rows)?, GemConfig::new(p)?)?;
            println!("gem {}", fmt_vec(&out));
        }
        KernelCommand::Arcface {
            x,
            weights,
            target,
            scale,
            margin,
        } => {
            let x = parse_vec(&x)?;
            let w = parse_rows(&weights)?;
            let cfg = ArcfaceConfig::new(scale, margin)?;
            let logits = arcface_logits(&x, &w, target, cfg)?;
            let lg = arcface_loss_grad(&x, &w, target, cfg)?;
            println!("logits {}", fmt_vec(&logits));
            println!("loss {:.6}", lg.loss);
            println!("grad_x {}", fmt_vec(&lg.grad_x));
        }
    }
    Ok(())
}

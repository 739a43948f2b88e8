//! Argument parsing and command dispatch for the `conceptblend` binary.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use conceptblend::backend::{DEFAULT_GUIDANCE, DEFAULT_STEPS};
use conceptblend::embedding_blend::DEFAULT_ALPHA;
use conceptblend::experiments::{
    appendix_grid, batch_tiles, compose_grid, execute, ratio_sweep_preset, run_batch, seed_dependency_preset,
    symmetry_preset, unet_split_sweep, BatchManifest, ConceptPair, Registry, RunStatus, DEFAULT_RATIOS,
    DEFAULT_SEEDS,
};
use conceptblend::pipeline::{generate, BlendConfig, BlendMethod};
use conceptblend::study_stats::{
    all_pairwise, pairwise_by_group, preference_order, rank_summary, read_dataset, results_csv, summary_csv,
    GroupBy, SignificanceTier,
};
use conceptblend::unet_routing::BlockSplit;
use conceptblend::ToyBackend;
use conceptblend_service::{AppState, ServiceConfig, StudyService};

#[derive(Debug, Parser)]
#[command(name = "conceptblend", version, about = "Blend two concepts in a latent diffusion pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one blended image.
    Blend(BlendArgs),
    /// Generate a single-prompt reference image.
    Baseline(BaselineArgs),
    /// Run the pairs x methods x seeds study batch.
    Batch(BatchArgs),
    /// Run one of the experiment presets for a pair.
    Preset(PresetArgs),
    /// Compose a batch into a labelled image grid.
    Grid(GridArgs),
    /// Preference tables, rank summaries and the Hasse diagram of a ranking dataset.
    Stats(StatsArgs),
    /// Serve the ranking study over HTTP.
    Serve(ServeArgs),
    /// Write the ranking dataset of a batch from the study log.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Small deterministic network; runs anywhere.
    Toy,
    /// Stable Diffusion v1.4; needs an external adapter.
    Sd14,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Textual,
    Switch,
    Alternate,
    Unet,
}

impl From<MethodArg> for BlendMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Textual => BlendMethod::Textual,
            MethodArg::Switch => BlendMethod::Switch,
            MethodArg::Alternate => BlendMethod::Alternate,
            MethodArg::Unet => BlendMethod::Unet,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SamplingArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_GUIDANCE)]
    pub guidance: f64,
    #[arg(long, value_enum, env = "BLEND_BACKEND", default_value = "toy")]
    pub backend: BackendKind,
    /// Output directory for manifest.json and image.png.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BlendArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub p1: String,
    #[arg(long)]
    pub p2: String,
    /// Share of the first prompt in [0, 1].
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// SWITCH only: iterations conditioned on the first prompt.
    #[arg(long)]
    pub switch_step: Option<usize>,
    /// ALTERNATE only: first prompt on iterations i % period == 0.
    #[arg(long)]
    pub period: Option<usize>,
    /// UNET only: block split as "n-m" or n.
    #[arg(long)]
    pub split: Option<BlockSplit>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

impl BlendArgs {
    pub fn to_config(&self) -> BlendConfig {
        BlendConfig {
            method: self.method.into(),
            prompt_1: self.p1.clone(),
            prompt_2: self.p2.clone(),
            ratio: self.alpha,
            seed: self.sampling.seed,
            steps: self.sampling.steps,
            guidance: self.sampling.guidance,
            switch_step: self.switch_step,
            period: self.period,
            split: self.split,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub prompt: String,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

impl BaselineArgs {
    pub fn to_config(&self) -> BlendConfig {
        BlendConfig::baseline(self.prompt.clone(), self.sampling.seed)
            .with_steps(self.sampling.steps)
            .with_guidance(self.sampling.guidance)
    }
}

#[derive(Debug, Clone, Args)]
pub struct BatchArgs {
    /// Restrict to one category of the registry.
    #[arg(long)]
    pub category: Option<String>,
    /// Alternative registry file (TOML).
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["textual", "switch", "alternate", "unet"])]
    pub methods: Vec<MethodArg>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, env = "BLEND_BACKEND", default_value = "toy")]
    pub backend: BackendKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetKind {
    /// Both prompt orders for each method.
    Symmetry,
    /// Shared, partly shared and distinct initial noise.
    SeedDependency,
    /// Each method at 25%, 50% and 75% of the first prompt.
    RatioSweep,
    /// UNET splits 1-6 through 6-1.
    UnetSplit,
}

#[derive(Debug, Clone, Args)]
pub struct PresetArgs {
    #[arg(value_enum)]
    pub preset: PresetKind,
    /// Pair id from the registry, e.g. lion-cat.
    #[arg(long)]
    pub pair: String,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, env = "BLEND_BACKEND", default_value = "toy")]
    pub backend: BackendKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Batch directory containing batch.json.
    #[arg(long)]
    pub batch: PathBuf,
    /// Methods x seeds grid of one pair; without it, every run in batch order.
    #[arg(long)]
    pub pair: Option<String>,
    /// Columns when tiling every run.
    #[arg(long, default_value_t = 4)]
    pub cols: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupArg {
    Pair,
    Category,
    All,
}

impl From<GroupArg> for GroupBy {
    fn from(g: GroupArg) -> Self {
        match g {
            GroupArg::Pair => GroupBy::Pair,
            GroupArg::Category => GroupBy::Category,
            GroupArg::All => GroupBy::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TierArg {
    Significant,
    Very,
    Extreme,
}

impl From<TierArg> for SignificanceTier {
    fn from(t: TierArg) -> Self {
        match t {
            TierArg::Significant => SignificanceTier::Significant,
            TierArg::Very => SignificanceTier::Very,
            TierArg::Extreme => SignificanceTier::Extreme,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    /// Ranking dataset, one record per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub group: GroupArg,
    /// Weakest significance drawn in the Hasse diagram.
    #[arg(long, value_enum, default_value = "significant")]
    pub tier_min: TierArg,
    /// Directory for preferences.csv, ranks.csv and hasse.dot; defaults next to the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    /// Event log and generation cache.
    #[arg(long, default_value = "study-data")]
    pub data: PathBuf,
    /// Directory holding one subdirectory per batch.
    #[arg(long, default_value = "batches")]
    pub batches: PathBuf,
    #[arg(long, env = "STUDY_SECRET", default_value = "conceptblend-study", hide_env_values = true)]
    pub secret: String,
    /// Seed whose images are shown; defaults to the batch's first seed.
    #[arg(long)]
    pub display_seed: Option<u64>,
}

impl StudyArgs {
    fn open(&self) -> Result<StudyService> {
        let mut config = ServiceConfig::new(&self.data, &self.batches, self.secret.clone());
        config.display_seed = self.display_seed;
        StudyService::open(config).map_err(|e| anyhow::anyhow!(e)).context("opening the study log")
    }
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[command(flatten)]
    pub study: StudyArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub batch: String,
    #[command(flatten)]
    pub study: StudyArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn toy_backend(kind: BackendKind) -> Result<ToyBackend> {
    match kind {
        BackendKind::Toy => Ok(ToyBackend::new()),
        BackendKind::Sd14 => bail!(
            "the sd14 backend needs an external Stable Diffusion adapter, which this build does not include; use --backend toy"
        ),
    }
}

fn registry_pair(id: &str) -> Result<ConceptPair> {
    Registry::bundled()
        .get(id)
        .cloned()
        .with_context(|| format!("pair {id:?} is not in the registry"))
}

fn default_out(config: &BlendConfig) -> PathBuf {
    Path::new("out").join(format!("{}-{}", config.method.slug(), &config.content_key()[..12]))
}

fn run_single(config: &BlendConfig, sampling: &SamplingArgs) -> Result<()> {
    let mut backend = toy_backend(sampling.backend)?;
    config.validate()?;
    let result = generate(&mut backend, config)?;
    let out = sampling.out.clone().unwrap_or_else(|| default_out(config));
    let manifest = result.write_artifacts(&out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn report_batch(batch: &BatchManifest, out: &Path) -> Result<()> {
    let failed = batch.count(RunStatus::Failed);
    eprintln!(
        "{} runs: {} generated, {} reused, {failed} failed",
        batch.runs.len(),
        batch.count(RunStatus::Generated),
        batch.count(RunStatus::Reused)
    );
    for r in batch.failures() {
        eprintln!("  {}: {}", r.manifest.display(), r.error.as_deref().unwrap_or("unknown error"));
    }
    println!("{}", out.join(BatchManifest::FILE_NAME).display());
    if failed > 0 {
        bail!("{failed} runs failed");
    }
    Ok(())
}

fn run_stats(args: &StatsArgs) -> Result<()> {
    let records = read_dataset(&args.input)?;
    if records.is_empty() {
        bail!("{} contains no rankings", args.input.display());
    }
    let registry = Registry::bundled();
    let group: GroupBy = args.group.into();
    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => args.input.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let rows = pairwise_by_group(&records, group, &registry)?;
    let prefs = out.join("preferences.csv");
    fs::write(&prefs, results_csv(&rows)?)?;
    let ranks = out.join("ranks.csv");
    fs::write(&ranks, summary_csv(&rank_summary(&records, group, &registry)?)?)?;

    let order = preference_order(&all_pairwise(&records)?, args.tier_min.into())?;
    let dot = out.join("hasse.dot");
    fs::write(&dot, order.to_dot())?;
    for p in [prefs, ranks, dot] {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Blend(args) => run_single(&args.to_config(), &args.sampling),
        Command::Baseline(args) => run_single(&args.to_config(), &args.sampling),
        Command::Batch(args) => {
            let backend = toy_backend(args.backend)?;
            let registry = match &args.registry {
                Some(path) => Registry::from_path(path)?,
                None => Registry::bundled(),
            };
            let pairs = match &args.category {
                Some(c) => registry.in_category(c.parse()?),
                None => registry.pairs().to_vec(),
            };
            let methods: Vec<BlendMethod> = args.methods.iter().map(|&m| m.into()).collect();
            let batch = run_batch(&backend, &pairs, &methods, &args.seeds, &args.out)?;
            report_batch(&batch, &args.out)
        }
        Command::Preset(args) => {
            let backend = toy_backend(args.backend)?;
            let pair = registry_pair(&args.pair)?;
            let seed = *args.seeds.first().context("at least one seed is required")?;
            let plan = match args.preset {
                PresetKind::Symmetry => symmetry_preset(&pair, &args.seeds),
                PresetKind::SeedDependency => seed_dependency_preset(&pair, seed),
                PresetKind::RatioSweep => ratio_sweep_preset(&pair, &DEFAULT_RATIOS, seed),
                PresetKind::UnetSplit => unet_split_sweep(&pair, seed),
            };
            let batch = execute(&backend, &plan, &args.out)?;
            report_batch(&batch, &args.out)
        }
        Command::Grid(args) => {
            let batch = BatchManifest::read(&args.batch)?;
            let layout = match &args.pair {
                Some(pair) => appendix_grid(&batch, &args.batch, pair, &args.out)?,
                None => {
                    if args.cols == 0 {
                        bail!("--cols must be at least 1");
                    }
                    let tiles = batch_tiles(&batch, &args.batch);
                    if !tiles.len().is_multiple_of(args.cols) {
                        bail!("{} runs do not fill rows of {}", tiles.len(), args.cols);
                    }
                    compose_grid(&tiles, tiles.len() / args.cols, args.cols, &[], &[], &args.out)?
                }
            };
            eprintln!("{}x{} grid", layout.rows, layout.cols);
            println!("{}", args.out.display());
            Ok(())
        }
        Command::Stats(args) => run_stats(&args),
        Command::Serve(args) => {
            let study = args.study.open()?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(conceptblend_service::serve(AppState::new(study, ToyBackend::new()), args.addr))?;
            Ok(())
        }
        Command::Export(args) => {
            let study = args.study.open()?;
            let text = study.export_dataset(&args.batch).map_err(|e| anyhow::anyhow!(e))?;
            match &args.out {
                Some(path) => {
                    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
                    println!("{}", path.display());
                }
                None => print!("{text}"),
            }
            Ok(())
        }
    }
}

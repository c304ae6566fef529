//! `worldcache`: build world caches, render conditions, align depth and run
//! the clip sampler from the command line.

mod commands;
mod error;
mod files;
mod session;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use error::{CliError, CliResult};

pub const THREADS_ENV: &str = "WORLDCACHE_THREADS";

#[derive(Parser)]
#[command(name = "worldcache", version, about = "World cache pipeline tools")]
struct Cli {
    /// Session config (JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse RGB-D frames into a world cache.
    #[command(subcommand)]
    Cache(CacheCmd),
    /// Render partial RGB-D conditions from a cache.
    #[command(subcommand)]
    Condition(ConditionCmd),
    /// Align monocular depth to a reference and a metric scale.
    #[command(subcommand)]
    Align(AlignCmd),
    /// Auto-regressive clip sampling around a denoiser.
    #[command(subcommand)]
    Sample(SampleCmd),
    /// Analytic ground-truth scenes.
    #[command(subcommand)]
    Oracle(OracleCmd),
    #[command(subcommand)]
    Export(ExportCmd),
    /// Print cache size and culling statistics.
    Stats(StatsArgs),
    /// Answer denoiser requests on stdin/stdout.
    #[command(hide = true)]
    ServeDenoiser(ServeArgs),
}

#[derive(Subcommand)]
enum CacheCmd {
    Build(CacheBuildArgs),
}

#[derive(Subcommand)]
enum ConditionCmd {
    Render(ConditionRenderArgs),
}

#[derive(Subcommand)]
enum AlignCmd {
    Run(AlignArgs),
}

#[derive(Subcommand)]
enum SampleCmd {
    Run(SampleArgs),
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Ray-cast a scene from every camera of a trajectory.
    Render(OracleRenderArgs),
    /// Write the built-in orbit room scene and trajectory.
    Fixture(FixtureArgs),
}

#[derive(Subcommand)]
enum ExportCmd {
    /// Plain PLY point cloud for external viewers.
    Ply(ExportPlyArgs),
}

#[derive(Args, Serialize)]
pub struct CacheBuildArgs {
    /// Directory of rgb_NNNN.png and depth_NNNN.pfm.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Camera array or trajectory spec (JSON).
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct ConditionRenderArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct AlignArgs {
    /// Relative depth to align (depth_NNNN.pfm).
    #[arg(long)]
    pub src: PathBuf,
    /// Reference depth (depth_NNNN.pfm).
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Metric depth for the scale (depth_NNNN.pfm).
    #[arg(long)]
    pub metric: Option<PathBuf>,
    /// Cameras whose translations get the metric scale.
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    /// Exclusion masks (mask_NNNN.png or .pfm); set pixels are ignored.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// One scale and bias for the whole sequence.
    #[arg(long)]
    pub per_sequence: bool,
    /// One metric scale per frame instead of per scene.
    #[arg(long)]
    pub metric_per_frame: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    Identity,
    Oracle,
    Extern,
}

#[derive(Args, Serialize)]
pub struct SampleArgs {
    /// First frame as `depth.pfm+rgb.png`.
    #[arg(long)]
    pub init: String,
    /// Camera array or trajectory spec (JSON).
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long, value_enum)]
    pub denoiser: DenoiserKind,
    /// Scene for the oracle denoiser.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Program for the extern denoiser.
    #[arg(long)]
    pub extern_cmd: Option<String>,
    /// Argument passed to the extern program; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    pub extern_arg: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct OracleRenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Camera array or trajectory spec (JSON).
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 48)]
    pub frames: usize,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 2.5)]
    pub radius: f64,
}

#[derive(Args, Serialize)]
pub struct ExportPlyArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ascii: bool,
}

#[derive(Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ServeKind {
    Identity,
    Oracle,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(value_enum)]
    pub kind: ServeKind,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub traj: Option<PathBuf>,
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::new("invalid_config", format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::new("invalid_config", e.to_string()))
}

fn run() -> CliResult<()> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::new("usage", first.trim_start_matches("error: ")));
        }
    };
    configure_threads()?;
    let cfg = session::SessionConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Cache(CacheCmd::Build(a)) => commands::cache_build(&cfg, &a),
        Command::Condition(ConditionCmd::Render(a)) => commands::condition_render(&cfg, &a),
        Command::Align(AlignCmd::Run(a)) => commands::align_run(&cfg, &a),
        Command::Sample(SampleCmd::Run(a)) => commands::sample_run(&cfg, &a),
        Command::Oracle(OracleCmd::Render(a)) => commands::oracle_render(&cfg, &a),
        Command::Oracle(OracleCmd::Fixture(a)) => commands::oracle_fixture(&cfg, &a),
        Command::Export(ExportCmd::Ply(a)) => commands::export_ply(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::ServeDenoiser(a) => commands::serve_denoiser(&a),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}

//! `componerf` command-line tool.

mod commands;
mod error;
mod guidance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use componerf::fixtures;

use error::CliError;

/// Default remote endpoint when `--guidance` is not given.
pub const GUIDANCE_URL_ENV: &str = "COMPONERF_GUIDANCE_URL";

#[derive(Parser)]
#[command(name = "componerf", version, about = "Compositional NeRF scenes from a box layout and text prompts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a scene from scratch and write a checkpoint plus snapshots.
    Compose(ComposeArgs),
    /// Render views of a checkpoint.
    Render(RenderArgs),
    /// Export per-node field caches from a checkpoint.
    Decompose(DecomposeArgs),
    /// Build a scene from an edited layout whose boxes reference node caches.
    Recompose(RecomposeArgs),
    /// Score orbit renders against an analytic target (PSNR) or with CLIP.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    Density,
    Color,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ColorMode {
    Latent,
    Rgb,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    /// Full-size fields and calibrators (the defaults).
    Full,
    /// Small fields for single-core CPU runs.
    Desk,
}

#[derive(Args, Clone)]
pub struct SceneArgs {
    #[arg(long, value_enum, default_value = "density")]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "latent")]
    pub color: ColorMode,
    #[arg(long, value_enum, default_value = "full")]
    pub preset: Preset,
    /// JSON scene config; replaces --preset/--color (--mode still applies).
    #[arg(long)]
    pub scene_config: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub steps: Option<u64>,
    /// `mock:TARGET.json` or `remote:URL`.
    #[arg(long)]
    pub guidance: Option<String>,
    /// Overrides the layout seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Derive the diffusion timestep from (seed, step) so remote runs replay.
    #[arg(long)]
    pub deterministic: bool,
    /// Training view resolution.
    #[arg(long, default_value_t = 64)]
    pub resolution: u32,
    #[arg(long)]
    pub snapshot_every: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha_g: Option<f64>,
    #[arg(long)]
    pub alpha_l: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Args)]
pub struct ComposeArgs {
    #[arg(long)]
    pub layout: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Circular orbit of this many frames; a single frame uses --azimuth.
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub azimuth: f64,
    #[arg(long, default_value_t = fixtures::ORBIT_ELEVATION, allow_hyphen_values = true)]
    pub elevation: f64,
    #[arg(long, default_value_t = fixtures::ORBIT_RADIUS)]
    pub radius: f64,
    #[arg(long, default_value_t = 128)]
    pub resolution: u32,
    /// Render one node's local view instead of the composited scene.
    #[arg(long)]
    pub node: Option<String>,
    /// Decode latent renders to RGB through the guidance service.
    #[arg(long)]
    pub rgb: bool,
    #[arg(long)]
    pub guidance: Option<String>,
}

#[derive(Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Only export this node.
    #[arg(long)]
    pub node: Vec<String>,
}

#[derive(Args)]
pub struct RecomposeArgs {
    /// Layout whose boxes may carry `cache_ref` (relative to the layout file).
    #[arg(long)]
    pub layout: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Take the scene config from this checkpoint instead of the flags.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Only load caches for these nodes; other boxes start fresh.
    #[arg(long)]
    pub node: Vec<String>,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// `mock:TARGET.json` for PSNR, `remote:URL` for CLIP.
    #[arg(long)]
    pub guidance: Option<String>,
    /// Report file (JSON); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub resolution: u32,
    #[arg(long)]
    pub prompt: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Config(first).line());
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Compose(a) => commands::compose(a),
        Command::Render(a) => commands::render(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Recompose(a) => commands::recompose(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Single binary exposing the pipeline: train, render, census, prune, mesh,
//! eval, synth.
//!
//! Exit codes: 0 success, 1 usage, 2 data/format, 3 numerical abort. Errors
//! additionally emit one machine-readable JSON line on standard error.

mod commands;
mod config_file;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "objsplat", version, about = "Object-centric 2D Gaussian splatting pipeline")]
struct Cli {
    /// Cap the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a splat model from a COLMAP dataset.
    Train(TrainArgs),
    /// Render a model from a camera specification file.
    Render(RenderArgs),
    /// Report occluded splats over the training views.
    Census(CensusArgs),
    /// Post-training occlusion prune.
    Prune(PruneArgs),
    /// Extract a triangle mesh via TSDF fusion and marching cubes.
    Mesh(MeshArgs),
    /// Masked image metrics or chamfer distance.
    Eval(EvalArgs),
    /// Generate synthetic datasets.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root (COLMAP sparse model + images/).
    #[arg(long)]
    data: PathBuf,
    /// Mask directory; omit to train without masks.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Output directory for the model and logs.
    #[arg(long)]
    out: PathBuf,
    /// Flat key=value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Background-loss coefficient.
    #[arg(long)]
    gamma: Option<f64>,
    /// Ignore masks entirely (photometric unmasked, background loss off).
    #[arg(long)]
    no_masking: bool,
    /// Disable occlusion-aware pruning during training.
    #[arg(long)]
    no_occlusion_prune: bool,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pin the run to the seed (bit-reproducible).
    #[arg(long)]
    deterministic: bool,
    /// Write a checkpoint here every --checkpoint-interval iterations.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    checkpoint_interval: usize,
    /// Resume from a checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this iteration (checkpoint/interrupt workflows).
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct RenderArgs {
    /// Splat model PLY.
    #[arg(long)]
    model: PathBuf,
    /// Camera specification file (key=value; see README).
    #[arg(long)]
    camera: PathBuf,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    /// Background color as r,g,b in [0,1].
    #[arg(long, default_value = "0,0,0")]
    background: String,
}

#[derive(Args)]
struct CensusArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset root providing the training cameras.
    #[arg(long)]
    data: PathBuf,
    /// Report file (newline-delimited JSON records).
    #[arg(long)]
    report: PathBuf,
    /// Directory for per-view occlusion heatmap overlays.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// bounded (needs --voxel-size and --dtrunc) or object (parameter-free).
    #[arg(long)]
    mode: String,
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    dtrunc: Option<f64>,
    /// Mask directory for mask-truncated bounded fusion.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Output mesh PLY.
    #[arg(long)]
    out: PathBuf,
    /// Optional OBJ export (geometry only).
    #[arg(long)]
    obj: Option<PathBuf>,
    #[arg(long, default_value_t = objsplat_core::mesher::DEFAULT_VOXEL_BUDGET)]
    max_voxels: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(subcommand)]
    chamfer: Option<EvalSub>,
    /// Dataset root with ground-truth images.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalSub {
    /// Chamfer distance between a mesh surface and reference points.
    Chamfer {
        #[arg(long)]
        mesh: PathBuf,
        /// Reference point cloud (PLY).
        #[arg(long)]
        ref_points: PathBuf,
        /// Number of surface samples drawn from the mesh.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// sphere, occluder, or badmask.
    kind: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Disable the checkerboard background shell (sphere/badmask).
    #[arg(long)]
    no_background: bool,
    /// Fraction of views carrying mask defects (badmask).
    #[arg(long, default_value_t = 0.1)]
    defect_fraction: f64,
}

/// Pipeline error mapped to an exit code.
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            kind: "usage",
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "data",
            message: message.into(),
        }
    }
}

impl From<objsplat_core::error::IngestError> for CliError {
    fn from(e: objsplat_core::error::IngestError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<objsplat_core::error::MeshError> for CliError {
    fn from(e: objsplat_core::error::MeshError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<objsplat_core::error::MetricError> for CliError {
    fn from(e: objsplat_core::error::MetricError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<objsplat_core::error::RenderError> for CliError {
    fn from(e: objsplat_core::error::RenderError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<objsplat_core::error::TrainError> for CliError {
    fn from(e: objsplat_core::error::TrainError) -> Self {
        use objsplat_core::error::TrainError;
        let code = match &e {
            TrainError::NonFiniteLoss { .. } => 3,
            _ => 2,
        };
        Self {
            code,
            kind: if code == 3 { "numerical" } else { "data" },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Let clap print help/version normally; everything else is a
            // usage error with exit code 1.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": "usage", "message": e.to_string()}})
            );
            std::process::exit(1);
        }
    };
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let result = match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Render(args) => commands::render(args),
        Command::Census(args) => commands::census(args),
        Command::Prune(args) => commands::prune(args),
        Command::Mesh(args) => commands::mesh(args),
        Command::Eval(args) => commands::eval(args),
        Command::Synth(args) => commands::synth(args),
    };
    if let Err(e) = result {
        eprintln!(
            "{}",
            serde_json::json!({"error": {"kind": e.kind, "message": e.message}})
        );
        std::process::exit(e.code);
    }
}

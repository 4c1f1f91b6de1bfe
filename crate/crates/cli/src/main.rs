mod commands;
mod error;
mod io;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use error::CliError;

/// Multi-view consensus detection and segmentation toolkit.
///
/// Every run writes `manifest.json` into its output directory. The
/// environment variable MVC_THREADS caps the number of worker threads
/// (default: available parallelism).
#[derive(Debug, Parser)]
#[command(name = "mvc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic multi-camera scene with ground truth.
    Simulate(SimulateArgs),
    /// Train the detector and mask head on a synthetic scene.
    Train(TrainArgs),
    /// Detect and segment the subject in one image.
    Infer(InferArgs),
    /// Score predicted masks and boxes against ground truth.
    Eval(EvalArgs),
    /// Least-squares intersection of the rays through one pixel per camera.
    Triangulate(TriangulateArgs),
    /// Fuse per-camera cell probability maps into a voxel distribution.
    Fuse(FuseArgs),
    /// Train and evaluate several consistency variants over several seeds.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    /// Scene description written by `simulate` (scene.json); overrides the
    /// other scene flags.
    #[arg(long, value_name = "FILE")]
    pub scene: Option<PathBuf>,
    /// Number of cameras on the ring.
    #[arg(long, value_name = "N")]
    pub cams: Option<usize>,
    /// Number of frames.
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    /// Seed of the scene (path, textures, camera phase).
    #[arg(long, default_value_t = 7)]
    pub scene_seed: u64,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, default_value = "128x128", value_name = "WxH")]
    pub size: String,
    /// Add one decoy per camera that is visible in that camera only.
    #[arg(long)]
    pub distractors: bool,
    /// Pan the background horizontally by this many pixels (0 = static).
    #[arg(long, default_value_t = 0.0, value_name = "PX")]
    pub pan: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub scene: SceneArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    /// Voxel grid resolution as NX,NY,NZ.
    #[arg(long, default_value = "10,10,10", value_name = "NX,NY,NZ")]
    pub grid_dims: String,
    /// Voxel grid edge length, meters.
    #[arg(long, default_value_t = 4.0, value_name = "M")]
    pub grid_side: f64,
    /// Detector cells per image as COLSxROWS.
    #[arg(long, default_value = "8x8", value_name = "CxR")]
    pub cells: String,
    /// Training steps.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Detector learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Mask-head learning rate.
    #[arg(long, default_value_t = 1e-4)]
    pub mask_lr: f64,
    /// Multi-view frame sets per step.
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    /// Image-loss reduction: `mean` (per pixel) or `sum`.
    #[arg(long, default_value = "mean", value_name = "MODE")]
    pub reduction: String,
    /// Treat the inpainted image as a constant when differentiating the
    /// inpainting error wrt the box.
    #[arg(long)]
    pub detached_inpaint: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Training seed (initialization and sampling).
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Do not move box centers to the triangulated consensus.
    #[arg(long)]
    pub no_center_consistency: bool,
    /// Do not make box heights consistent across views.
    #[arg(long)]
    pub no_height_consistency: bool,
    /// Also make box widths consistent across views.
    #[arg(long)]
    pub width_consistency: bool,
    /// Replace the consistency adjustments by a triangulation penalty.
    #[arg(long)]
    pub tc_baseline: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Input image (PNG).
    #[arg(long, value_name = "FILE")]
    pub image: PathBuf,
    /// Output directory for box.csv, mask.png and the manifest.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Frame number recorded in the box table.
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Camera number recorded in the box table.
    #[arg(long, default_value_t = 0)]
    pub cam: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted probability masks (8-bit PNG, 255 = 1).
    #[arg(long, value_name = "DIR")]
    pub pred_masks: PathBuf,
    /// Directory of ground-truth masks with the same file names.
    #[arg(long, value_name = "DIR")]
    pub gt_masks: PathBuf,
    /// Predicted boxes (frame,cam,cu,cv,w,h).
    #[arg(long, value_name = "FILE")]
    pub pred_boxes: PathBuf,
    /// Ground-truth boxes (frame,cam,cu,cv,w,h).
    #[arg(long, value_name = "FILE")]
    pub gt_boxes: PathBuf,
    /// Boundary-match tolerance for F, pixels (default: 0.8% of the image
    /// diagonal).
    #[arg(long, value_name = "PX")]
    pub f_tol: Option<f64>,
    /// Output directory for report.json and the manifest.
    #[arg(long, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TriangulateArgs {
    /// Camera rig file.
    #[arg(long, value_name = "FILE")]
    pub rig: PathBuf,
    /// One `u v` pixel per line, in camera order.
    #[arg(long, value_name = "FILE")]
    pub points: PathBuf,
    /// Output directory for the manifest.
    #[arg(long, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Camera rig file.
    #[arg(long, value_name = "FILE")]
    pub rig: PathBuf,
    /// One probability-map file per camera, comma separated. Each holds one
    /// line of cell probabilities per cell row.
    #[arg(long, value_delimiter = ',', required = true, value_name = "FILES")]
    pub maps: Vec<PathBuf>,
    /// Voxel grid resolution as NX,NY,NZ.
    #[arg(long, default_value = "10,10,10", value_name = "NX,NY,NZ")]
    pub grid_dims: String,
    /// Voxel grid edge length, meters.
    #[arg(long, default_value_t = 4.0, value_name = "M")]
    pub grid_side: f64,
    /// Grid center as X,Y,Z (default: the point the cameras look at).
    #[arg(long, value_name = "X,Y,Z")]
    pub center: Option<String>,
    /// Output directory for voxels.csv and the manifest.
    #[arg(long, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Variants to compare besides the full model: vc, hc, wc, tc.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "vc,hc,wc,tc",
        value_name = "LIST"
    )]
    pub variants: Vec<String>,
    /// Training seeds.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1,2,3",
        value_name = "LIST"
    )]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Output directory for ablation.csv and the manifest.
    #[arg(long, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,
}

fn threads() -> Result<usize, CliError> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("MVC_THREADS") {
        Err(_) => Ok(available),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Validation(format!(
                "MVC_THREADS must be a positive integer, got `{v}`"
            ))),
        },
    }
}

fn run(argv: Vec<String>) -> Result<(), CliError> {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            eprint!("{}", e.render());
            std::process::exit(1);
        }
    };
    let threads = threads()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, &argv, threads),
        Command::Train(a) => commands::train(&a, &argv, threads),
        Command::Infer(a) => commands::infer(&a, &argv, threads),
        Command::Eval(a) => commands::eval(&a, &argv, threads),
        Command::Triangulate(a) => commands::triangulate(&a, &argv, threads),
        Command::Fuse(a) => commands::fuse(&a, &argv, threads),
        Command::Ablate(a) => commands::ablate(&a, &argv, threads),
    }
}

fn main() {
    std::panic::set_hook(Box::new(|info| {
        let msg = info
            .payload()
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| info.payload().downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        eprintln!("internal error: {}", msg.lines().next().unwrap_or(""));
    }));
    let argv: Vec<String> = std::env::args().collect();
    let code = match std::panic::catch_unwind(|| run(argv)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("{}", e.to_string().lines().next().unwrap_or(""));
            e.exit_code()
        }
        Err(_) => 2,
    };
    std::process::exit(code);
}

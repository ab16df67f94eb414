mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use cellmorph::config::{PipelineConfig, ProposerKind};
use cellmorph::pipeline::{Stage, StageContext, StageError};
use cellmorph::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "cellmorph",
    version,
    about = "Stack, denoise, segment and measure rod-shaped cells in fluorescence raster scans"
)]
struct Cli {
    #[command(flatten)]
    opts: Options,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. Flags override the config file,
/// which overrides built-in defaults.
#[derive(Args, Debug, Clone)]
pub struct Options {
    /// Configuration file (`[section]` headers with `key = value` lines)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    pub out: PathBuf,
    /// BM3D noise level on the normalized scale
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// IoU above which overlapping masks are suppressed
    #[arg(long, global = true)]
    pub iou: Option<f64>,
    /// Smallest kept mask area in px
    #[arg(long, global = true, value_name = "PX")]
    pub min_area: Option<usize>,
    /// Largest kept mask area in px
    #[arg(long, global = true, value_name = "PX")]
    pub max_area: Option<usize>,
    /// Width of the edge band whose masks are dropped, in px
    #[arg(long, global = true, value_name = "PX")]
    pub border: Option<usize>,
    /// Baseline proposer seed grid size (N x N)
    #[arg(long, global = true, value_name = "N")]
    pub grid: Option<usize>,
    /// Precomputed masks: RLE JSON, 16-bit label PNG, or a directory of NNN.png
    #[arg(long, global = true, value_name = "PATH")]
    pub masks: Option<PathBuf>,
    /// External segmenter command with {input} and {output} placeholders
    #[arg(long, global = true, value_name = "CMD")]
    pub segmenter_cmd: Option<String>,
    /// Input files processed concurrently (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Seed for synthetic data
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the whole workflow on one or more TIFF stacks
    Pipeline {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Average, normalize and denoise a TIFF stack
    Denoise { input: PathBuf },
    /// Denoise a stack and write mask proposals
    Segment { input: PathBuf },
    /// Refine the masks given by --masks against a TIFF stack
    Postprocess { input: PathBuf },
    /// Measure the masks given by --masks on a TIFF stack
    Quantify { input: PathBuf },
    /// Score the masks given by --masks against point annotations (CSV x_px,y_px)
    Evaluate { annotations: PathBuf },
    /// Generate a synthetic field with ground truth
    Synth,
}

pub fn build_config(o: &Options) -> Result<PipelineConfig, StageError> {
    let mut cfg = match &o.config {
        Some(p) => PipelineConfig::load(p).stage(Stage::Config)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = o.sigma {
        cfg.denoise.sigma = v;
    }
    if let Some(v) = o.iou {
        cfg.postprocess.iou_thresh = v;
    }
    if let Some(v) = o.min_area {
        cfg.postprocess.min_area_px = v;
    }
    if let Some(v) = o.max_area {
        cfg.postprocess.max_area_px = v;
    }
    if let Some(v) = o.border {
        cfg.postprocess.border_px = v;
    }
    if let Some(v) = o.grid {
        cfg.proposals.grid_n = v;
    }
    if let Some(v) = o.seed {
        cfg.synth.rng_seed = v;
    }
    if let Some(cmd) = &o.segmenter_cmd {
        cfg.proposals.method = ProposerKind::External;
        cfg.proposals.segmenter_cmd = Some(cmd.clone());
    }
    if let Some(path) = &o.masks {
        cfg.proposals.method = ProposerKind::File;
        cfg.proposals.masks = Some(path.clone());
    }
    cfg.validate().stage(Stage::Config)?;
    Ok(cfg)
}

fn exit_code(e: &StageError) -> u8 {
    match e.source {
        Error::NotFound { .. } | Error::Config(_) | Error::InvalidParameter(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_config(&cli.opts).map_err(|e| vec![e.into()]).and_then(|cfg| {
        let o = &cli.opts;
        match &cli.command {
            Command::Pipeline { inputs } => commands::pipeline(inputs, o, &cfg),
            Command::Denoise { input } => commands::denoise(input, o, &cfg),
            Command::Segment { input } => commands::segment(input, o, &cfg),
            Command::Postprocess { input } => commands::postprocess(input, o, &cfg),
            Command::Quantify { input } => commands::quantify(input, o, &cfg),
            Command::Evaluate { annotations } => commands::evaluate(annotations, o, &cfg),
            Command::Synth => commands::synth(o, &cfg),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(errors) => {
            for f in &errors {
                match &f.input {
                    Some(input) => eprintln!("cellmorph: {}: {}", input.display(), f.error),
                    None => eprintln!("cellmorph: {}", f.error),
                }
            }
            ExitCode::from(errors.iter().map(|f| exit_code(&f.error)).max().unwrap_or(1))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddpm_polycube::pipeline::{run_pipeline, run_stage, with_threads, PipelineConfig, Stage, StageRecord, HISTOGRAM_FILE, MANIFEST_FILE};
use ddpm_polycube::Error;
use log::error;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "ddpm-polycube", version, about = "Polycube construction by drifted diffusion and all-hex meshing")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Single worker thread, bit-reproducible artifacts.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Input surface mesh (OBJ or STL).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training dataset manifest.
    GenData,
    /// Train the denoiser on the dataset.
    Train,
    /// Deform the input surface with a trained denoiser.
    Sample {
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Configuration id (0-8) or raw mask (0x..., 0b...).
        #[arg(long)]
        context: Option<String>,
    },
    /// Smooth and snap the diffused surface to a polycube.
    Polycube,
    /// Segment, parameterize, map and pillow the hex lattice.
    Hexmesh {
        #[arg(long)]
        depth: Option<u32>,
    },
    /// Optimize the hex mesh and report its scaled Jacobian.
    Quality,
    /// Run every configured stage and write the run manifest.
    Pipeline,
}

fn load_config(common: &Common) -> Result<PipelineConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::MissingInput(path.clone()));
            }
            PipelineConfig::load(path)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(input) = &common.input {
        cfg.input = Some(input.clone());
    }
    cfg.deterministic |= common.deterministic;
    Ok(cfg)
}

fn print_record(record: &StageRecord) {
    println!("{} finished in {:.2}s", record.stage, record.seconds);
    for o in &record.outputs {
        println!("  {}  {}", o.sha256, o.path.display());
    }
}

fn print_histogram(cfg: &PipelineConfig) {
    if let Ok(text) = std::fs::read_to_string(cfg.out_dir.join(HISTOGRAM_FILE)) {
        println!("scaled Jacobian histogram:");
        print!("{text}");
    }
}

fn execute(command: Command, common: &Common) -> Result<(), Error> {
    let mut cfg = load_config(common)?;
    let stage = match command {
        Command::GenData => Stage::GenData,
        Command::Train => Stage::Train,
        Command::Sample { weights, context } => {
            if let Some(w) = weights {
                cfg.weights = Some(w);
                cfg.training = None;
            }
            if let Some(c) = context {
                cfg.context = Some(c);
            }
            Stage::Sample
        }
        Command::Polycube => Stage::Polycube,
        Command::Hexmesh { depth } => {
            if let Some(d) = depth {
                cfg.depth = d;
            }
            Stage::Hexmesh
        }
        Command::Quality => Stage::Quality,
        Command::Pipeline => {
            let manifest = run_pipeline(&cfg)?;
            for r in &manifest.stages {
                print_record(r);
            }
            println!("manifest: {}", cfg.out_dir.join(MANIFEST_FILE).display());
            if manifest.stage(Stage::Quality).is_some() {
                print_histogram(&cfg);
            }
            return Ok(());
        }
    };
    let record = with_threads(cfg.deterministic, || run_stage(&cfg, stage))?;
    print_record(&record);
    if stage == Stage::Quality {
        print_histogram(&cfg);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(match e {
                Error::Stage { .. } => EXIT_STAGE,
                _ => EXIT_CONFIG,
            })
        }
    }
}

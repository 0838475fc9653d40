use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use open_sora_kit::conditioning::CameraMotion;
use open_sora_kit::pipeline::commands::{self, SampleArgs};
use open_sora_kit::pipeline::KitConfig;

/// Desk-scale video diffusion toolkit.
#[derive(Parser)]
#[command(name = "open-sora-kit", version)]
struct Cli {
    /// TOML config; built-in toy defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default config as TOML.
    InitConfig,
    /// Generate a synthetic moving-shape dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        n: usize,
        /// Dataset seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cut, score, filter and caption a directory of videos.
    Prep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the latent codec on a dataset.
    CodecTrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode and decode one video, reporting PSNR and SSIM.
    CodecRoundtrip {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the staged diffusion training schedule.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many steps.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Evaluate the length × resolution validation-loss grid.
    Validate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        /// Checkpoint directory; random weights when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a video, optionally conditioned on input frames.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        prompt: String,
        /// Appended aesthetic score.
        #[arg(long)]
        aesthetic: Option<f64>,
        /// Appended motion score.
        #[arg(long)]
        motion: Option<f64>,
        /// Appended camera motion, e.g. "pan left".
        #[arg(long)]
        camera: Option<CameraMotion>,
        #[arg(long, default_value_t = 9)]
        frames: usize,
        /// Square side in pixels.
        #[arg(long, default_value_t = 16)]
        resolution: usize,
        #[arg(long)]
        steps: Option<usize>,
        /// Sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4.0)]
        fps: f64,
        /// Mask over latent frames: first:K, last:K, firstlast:K, frames:i,j.
        #[arg(long)]
        condition: Option<String>,
        /// Conditioning image (.png) or video (.vten).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write PNG frames here.
        #[arg(long)]
        png_dir: Option<PathBuf>,
    },
    /// Plan one epoch of bucketed batches.
    BucketPlan {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stage: Option<u32>,
        /// Print the per-bucket load report instead of the batches.
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the parameter census of the configured model.
    ModelDescribe,
}

fn run(cli: Cli) -> open_sora_kit::Result<()> {
    let cfg = KitConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::InitConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Synth { out, n, seed } => commands::synth(&cfg, &out, n, seed),
        Command::Prep { input, out } => commands::prep(&cfg, &input, &out),
        Command::CodecTrain { data, out } => commands::codec_train(&cfg, &data, &out),
        Command::CodecRoundtrip { codec, input, out } => commands::codec_roundtrip(&codec, &input, &out),
        Command::Train { data, codec, out, resume, max_steps } => {
            commands::train(&cfg, &data, &codec, &out, resume.as_deref(), max_steps)
        }
        Command::Validate { data, codec, checkpoint, out } => {
            commands::validate(&cfg, &data, &codec, checkpoint.as_deref(), out.as_deref())
        }
        Command::Sample {
            checkpoint,
            codec,
            prompt,
            aesthetic,
            motion,
            camera,
            frames,
            resolution,
            steps,
            seed,
            fps,
            condition,
            input,
            out,
            png_dir,
        } => commands::sample(
            &cfg,
            &SampleArgs {
                checkpoint,
                codec,
                prompt,
                aesthetic,
                motion,
                camera,
                frames,
                resolution,
                steps,
                seed,
                fps,
                condition,
                input,
                out,
                png_dir,
            },
        ),
        Command::BucketPlan { data, stage, dry_run, out } => commands::bucket_plan(&cfg, &data, stage, dry_run, out.as_deref()),
        Command::ModelDescribe => commands::model_describe(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}

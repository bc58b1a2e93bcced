use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfqe_core::pipeline::{run_pipeline, run_stage, PipelineConfig, Stage, KEYS};

#[derive(Parser)]
#[command(name = "mfqe", version, about = "Multi-frame quality enhancement pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Flat `key = value` config file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the `work_dir` key.
    #[arg(long)]
    work_dir: Option<PathBuf>,
    /// Overrides any key, e.g. `--set mfcnn.steps=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Compress the raw sequence (synthesizing it if no input is configured).
    Degrade(Common),
    /// Per-frame PSNR, SSIM, QP and ground-truth PQF labels.
    Features(Common),
    /// Pretrain and fine-tune the quantizing DBN.
    TrainDbn(Common),
    /// One quantized scalar per frame.
    Quantize(Common),
    /// Train the Bi-LSTM PQF detector.
    TrainDetector(Common),
    /// Predict and refine PQF labels.
    Detect(Common),
    /// Train the motion compensation and enhancement subnets.
    TrainMfcnn(Common),
    /// Enhance every non-PQF.
    Enhance(Common),
    /// Before/after table, aggregates and plot traces.
    Report(Common),
    /// Every stage in order.
    All(Common),
    /// Print every config key with its default.
    Keys,
}

fn load_config(c: &Common) -> Result<PipelineConfig, String> {
    let text = match &c.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("config {}: {e}", p.display()))?,
        None => String::new(),
    };
    let mut overrides = Vec::new();
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        overrides.push((k.to_string(), v.to_string()));
    }
    if let Some(seed) = c.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(dir) = &c.work_dir {
        overrides.push(("work_dir".into(), dir.display().to_string()));
    }
    PipelineConfig::parse_with_overrides(&text, &overrides).map_err(|e| format!("config: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, common) = match &cli.command {
        Command::Keys => {
            for (key, default, doc) in KEYS {
                println!("{key} = {default}    # {doc}");
            }
            return ExitCode::SUCCESS;
        }
        Command::All(c) => (None, c),
        Command::Degrade(c) => (Some(Stage::Degrade), c),
        Command::Features(c) => (Some(Stage::Features), c),
        Command::TrainDbn(c) => (Some(Stage::TrainDbn), c),
        Command::Quantize(c) => (Some(Stage::Quantize), c),
        Command::TrainDetector(c) => (Some(Stage::TrainDetector), c),
        Command::Detect(c) => (Some(Stage::Detect), c),
        Command::TrainMfcnn(c) => (Some(Stage::TrainMfcnn), c),
        Command::Enhance(c) => (Some(Stage::Enhance), c),
        Command::Report(c) => (Some(Stage::Report), c),
    };
    let cfg = match load_config(common) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let result = match stage {
        Some(s) => run_stage(s, &cfg),
        None => run_pipeline(&cfg).map(|r| {
            let a = &r.aggregates;
            println!(
                "mean delta PSNR {:.4} dB, mean delta SSIM {:.6} over {} non-PQF frames",
                a.mean_delta_psnr, a.mean_delta_ssim, a.non_pqf_frames
            );
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

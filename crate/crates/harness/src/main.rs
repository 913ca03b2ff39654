use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gsm_forge::commands::{self, CommandReport};
use gsm_forge::plot::{emit_plot, PlotKind};
use gsm_forge::ppm::write_raster;
use gsm_forge::synth::{synth_raster, SynthParams};
use gsm_forge::{load_model, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "gsm-forge", version, about = "GSM attacks against a toy learned image codec")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the codec; writes weights and a loss CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Attack every benchmark pair for every seed.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Grid over budget and iteration count.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Grid over the decay factor; entries above 1 are divisors.
    AblateK {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        grid: String,
    },
    /// JPEG defense with naive and JPEG-aware attacks.
    Defense {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Render a CSV as SVG.
    Plot {
        #[arg(long)]
        kind: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a deterministic synthetic PPM corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        count: usize,
        #[arg(long, default_value_t = 192)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 0.0)]
        blur: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cmd: Cmd) -> Result<Option<CommandReport>, HarnessError> {
    let with_model = |config: &PathBuf, weights: &PathBuf| -> Result<_, HarnessError> {
        let cfg = ExperimentConfig::load(config)?;
        let model = load_model(&cfg, weights)?;
        Ok((cfg, model))
    };
    Ok(Some(match cmd {
        Cmd::Train { config } => commands::cmd_train(&ExperimentConfig::load(&config)?)?,
        Cmd::Attack { config, weights } => {
            let (cfg, m) = with_model(&config, &weights)?;
            commands::cmd_attack(&cfg, &m)?
        }
        Cmd::Sweep { config, weights } => {
            let (cfg, m) = with_model(&config, &weights)?;
            commands::cmd_sweep(&cfg, &m)?
        }
        Cmd::AblateK { config, weights, grid } => {
            let grid = commands::parse_grid(&grid)?;
            let (cfg, m) = with_model(&config, &weights)?;
            commands::cmd_ablate_k(&cfg, &m, &grid)?
        }
        Cmd::Defense { config, weights } => {
            let (cfg, m) = with_model(&config, &weights)?;
            commands::cmd_defense(&cfg, &m)?
        }
        Cmd::Plot { kind, input, out } => {
            emit_plot(kind.parse::<PlotKind>()?, &input, &out)?;
            return Ok(None);
        }
        Cmd::Synth { out, count, width, height, blur, seed } => {
            std::fs::create_dir_all(&out).map_err(|source| HarnessError::Io { path: out.clone(), source })?;
            let p = SynthParams { width, height, blur };
            for i in 0..count {
                write_raster(&synth_raster(&p, seed + i as u64), &out.join(format!("synth{i:03}.ppm")))?;
            }
            return Ok(None);
        }
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(report)) => {
            println!("wrote {}", report.directory.display());
            if report.failures > 0 {
                eprintln!("{} run(s) did not complete cleanly; see results.csv", report.failures);
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multiage::Split;
use multiage_cli::{
    cmd_calibrate, cmd_compose_wild, cmd_evaluate, cmd_flag_noise, cmd_report, cmd_synth, cmd_train, CliError,
    ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "multiage", version, about = "Train and evaluate multi-task underage detection heads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Root directory for run directories.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    Train(Common),
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    ComposeWild(Common),
    FlagNoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    Synth(Common),
    Report(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::load(&c.config, c.seed, c.out.as_deref())
}

fn run(cli: Cli) -> Result<String, CliError> {
    let json = |v: &dyn erased::Json| v.render();
    Ok(match cli.command {
        Command::Train(c) => {
            let r = cmd_train(&load(&c)?)?;
            let best = r.body.best();
            format!(
                "config {}: best epoch {} (val MAE {:.3}, val loss {:.4})",
                r.config_hash, best.epoch, best.val_mae, best.val_loss
            )
        }
        Command::Calibrate { common, checkpoint } => json(&cmd_calibrate(&load(&common)?, checkpoint.as_deref())?),
        Command::Evaluate {
            common,
            thresholds,
            split,
            checkpoint,
        } => {
            let r = cmd_evaluate(&load(&common)?, thresholds.as_deref(), split, checkpoint.as_deref())?;
            multiage::metrics::render_table(&r.body.calibrated)
        }
        Command::ComposeWild(c) => {
            let r = cmd_compose_wild(&load(&c)?)?;
            let mut out = r.body.breakdown.to_csv();
            for crit in &r.body.criteria {
                if crit.missing > 0 {
                    out.push_str(&format!("{}: {} samples lack the measurement\n", crit.name, crit.missing));
                }
            }
            out
        }
        Command::FlagNoise { common, checkpoint } => {
            let r = cmd_flag_noise(&load(&common)?, checkpoint.as_deref())?;
            format!("{} review candidates", r.body.len())
        }
        Command::Synth(c) => json(&cmd_synth(&load(&c)?)?),
        Command::Report(c) => {
            let r = cmd_report(&load(&c)?)?;
            format!("report for config {}", r.config_hash)
        }
    })
}

mod erased {
    pub trait Json {
        fn render(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn render(&self) -> String {
            serde_json::to_string_pretty(self).unwrap_or_default()
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use enact_harness::config::{ConfigOverrides, ScenarioConfig, TrainConfig};
use enact_harness::{bench, gradcheck, inspect, output_dir, train};

#[derive(Parser)]
#[command(name = "enact-harness", version, about = "Entropy-based attention clustering harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file of `key = value` scenario fields.
    #[arg(long)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: ConfigOverrides,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<ConfigOverrides> {
        let file = match &self.config {
            Some(path) => ConfigOverrides::from_file(path)
                .with_context(|| format!("reading {}", path.display()))?,
            None => ConfigOverrides::default(),
        };
        Ok(file.layered(&self.overrides))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Baseline vs clustered attention; writes report.json and report.csv.
    Bench(Common),
    /// Analytic vs finite-difference gradients of the clustered layer.
    Gradcheck(Common),
    /// Gradient descent on the p.d.f. head; writes loss.csv.
    Train(Common),
    /// Per-stage signals of one sample; writes inspect.csv.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let out = output_dir();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::Bench(common) => {
            let config = common.resolve()?.scenario(ScenarioConfig::default())?;
            let report = bench::run_and_write(&config, &out)?;
            println!(
                "clusters {:?} ratio {:.6} ({} / {} weight elements)",
                report.counts, report.ratio, report.ragged_weight_elements,
                report.baseline_weight_elements
            );
            println!(
                "baseline {:.3}s enact {:.3}s; wrote {}",
                report.baseline_seconds,
                report.enact_seconds,
                out.join("report.json").display()
            );
            Ok(true)
        }
        Command::Gradcheck(common) => {
            let config = common.resolve()?.scenario(ScenarioConfig::gradcheck_default())?;
            let report = gradcheck::run_gradient_check(&config)?;
            for block in &report.blocks {
                println!(
                    "{} {:<13} coords {:>4} max rel err {:.3e} (worst at {})",
                    if block.passed { "PASS" } else { "FAIL" },
                    block.name,
                    block.coordinates,
                    block.max_relative_error,
                    block.worst_index
                );
            }
            std::fs::write(out.join("gradcheck.json"), serde_json::to_string_pretty(&report)?)?;
            Ok(report.passed())
        }
        Command::Train(common) => {
            let resolved = common.resolve()?;
            let config = resolved.scenario(ScenarioConfig::training_default())?;
            let train_config = resolved.training(TrainConfig::default());
            let outcome = train::run_toy_training(&config, &train_config)?;
            train::write_loss_csv(&out.join("loss.csv"), &outcome.losses)?;
            println!(
                "loss {:.6e} -> {:.6e} over {} steps; wrote {}",
                outcome.initial_loss(),
                outcome.final_loss(),
                outcome.losses.len(),
                out.join("loss.csv").display()
            );
            Ok(outcome.final_loss() <= outcome.initial_loss())
        }
        Command::Inspect { common, sample } => {
            let config = common.resolve()?.scenario(ScenarioConfig::default())?;
            let rows = inspect::inspect_sample(&config, sample)?;
            let path = out.join("inspect.csv");
            inspect::write_inspect_csv(&path, &rows)?;
            let regions = rows.last().map_or(0, |r| r.region + 1);
            println!("sample {sample}: {} pixels, {regions} regions; wrote {}", rows.len(), path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

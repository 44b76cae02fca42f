use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedbps::config::parse_config;
use fedbps::harness::{cmd_gradcheck, cmd_partition_preview, cmd_run, GradSelector, PREVIEW_CSV};
use fedbps::FederationConfig;

/// Personalized federated learning simulator.
#[derive(Parser)]
#[command(name = "fedbps", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file (TOML), or a run manifest (`manifest.json`) to reproduce.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> fedbps::Result<(FederationConfig, Option<PathBuf>)> {
        let cfg = parse_config(&self.config, &self.overrides)?;
        let out = self.out.clone().or_else(|| cfg.out_dir.clone());
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a federation and write manifest.json plus metrics.csv.
    Run(ConfigArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Network to check: `mlp` (4-16-3) or `cnn`.
        #[arg(long, default_value = "mlp")]
        spec: GradSelector,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Perturb one analytic gradient component (negative control).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Print per-client label histograms of the configured partition.
    PartitionPreview(ConfigArgs),
}

fn run(cli: Cli) -> fedbps::Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let (cfg, out) = args.load()?;
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join(cfg.method.name()));
            let summary = cmd_run(&cfg, &out)?;
            println!("{summary}");
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Gradcheck { spec, seed, corrupt } => {
            let report = cmd_gradcheck(spec, seed, corrupt)?;
            println!("{report}");
            Ok(report.passed)
        }
        Command::PartitionPreview(args) => {
            let (cfg, out) = args.load()?;
            let preview = cmd_partition_preview(&cfg, out.as_deref())?;
            print!("{}", preview.table());
            if let Some(dir) = out {
                println!("wrote {}", dir.join(PREVIEW_CSV).display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

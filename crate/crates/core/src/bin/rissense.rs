use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rissense::campaign::{dp_ccdf, dp_maps, run_campaign, write_ccdf, write_dp_map, write_link_budgets};
use rissense::config::ScenarioConfig;

#[derive(Parser)]
#[command(name = "rissense", version, about = "RIS-aided monostatic sensing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo tracking campaign (GOSPA time series, CCDF, dumps).
    Campaign(Common),
    /// Detection-probability maps for random and directional RIS profiles.
    DpMap(Common),
    /// Path-loss sweeps of the four signal types.
    LinkBudget(Common),
    /// CCDF of the branch detection probabilities.
    Ccdf(Common),
}

#[derive(Args)]
struct Common {
    /// TOML scenario file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo run count; overrides the config value.
    #[arg(long)]
    runs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override a config field, e.g. `--set signal.tx_power_dbm=30`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> rissense::Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p, &self.overrides)?,
            None => ScenarioConfig::from_toml("", None, &self.overrides)?,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        for w in cfg.warnings() {
            eprintln!("warning: {w}");
        }
        Ok(cfg)
    }
}

fn prepare(out: &Path) -> rissense::Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn run(cli: Cli) -> rissense::Result<()> {
    match cli.command {
        Command::Campaign(c) => {
            let cfg = c.load()?;
            let summary = run_campaign(&cfg, Some(&c.out))?;
            for label in rissense::campaign::FilterLabel::ALL {
                if let Some(m) = summary.mean_at(label, cfg.epochs) {
                    println!("{:<11} mean GOSPA at k={}: {:.3} m", label.name(), cfg.epochs, m);
                }
            }
        }
        Command::DpMap(c) => {
            let cfg = c.load()?;
            prepare(&c.out)?;
            let (random, direct) = dp_maps(&cfg)?;
            write_dp_map(&c.out.join("dp_map_random.csv"), &random)?;
            write_dp_map(&c.out.join("dp_map_direct.csv"), &direct)?;
        }
        Command::LinkBudget(c) => {
            let cfg = c.load()?;
            write_link_budgets(&c.out, &cfg)?;
        }
        Command::Ccdf(c) => {
            let cfg = c.load()?;
            prepare(&c.out)?;
            write_ccdf(&c.out.join("dp_ccdf.csv"), &dp_ccdf(&cfg)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

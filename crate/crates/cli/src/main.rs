use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wqes_cli::config::WeightsPlotSection;
use wqes_cli::{run, CliError, CliResult, Command, RunConfig};

/// Weighted-quantile Expected Shortfall: simulation, estimation and backtesting.
#[derive(Parser)]
#[command(name = "wqes", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the command named in the config file.
    Run {
        #[arg(value_name = "CONFIG")]
        manifest: PathBuf,
        #[command(flatten)]
        common: Overrides,
    },
    /// Monte-Carlo bias study.
    Simulate {
        #[command(flatten)]
        common: Overrides,
        /// Number of replications.
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Full-sample estimation and next-step forecasts.
    Fit {
        #[command(flatten)]
        common: Overrides,
    },
    /// Rolling out-of-sample forecasts and loss summaries.
    Backtest {
        #[command(flatten)]
        common: Overrides,
    },
    /// Model confidence sets from saved forecasts.
    Mcs {
        #[command(flatten)]
        common: Overrides,
    },
    /// Beta weight curves as plot data.
    WeightsPlot {
        #[command(flatten)]
        common: Overrides,
        /// Shape pair `a,b`; repeatable.
        #[arg(long = "ab", value_parser = parse_pair)]
        params: Vec<(f64, f64)>,
        #[arg(long)]
        points: Option<usize>,
    },
}

#[derive(Args)]
struct Overrides {
    /// TOML run manifest.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker threads (WQES_WORKERS takes precedence).
    #[arg(long)]
    workers: Option<usize>,
}

impl Overrides {
    fn load(&self, config: Option<&PathBuf>) -> CliResult<RunConfig> {
        let mut cfg = match config.or(self.config.as_ref()) {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::empty(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        Ok(cfg)
    }
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected 'a,b', got '{s}'"))?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}"));
    Ok((p(a)?, p(b)?))
}

fn execute(cli: Cli) -> CliResult<Vec<PathBuf>> {
    let (cfg, command) = match cli.command {
        Cmd::Run { manifest, common } => {
            let cfg = common.load(Some(&manifest))?;
            let command = cfg.command.ok_or_else(|| CliError::validation("config has no 'command' key"))?;
            (cfg, command)
        }
        Cmd::Simulate { common, reps } => {
            let mut cfg = common.load(None)?;
            if let Some(r) = reps {
                cfg.simulate.n_reps = r;
            }
            (cfg, Command::Simulate)
        }
        Cmd::Fit { common } => (common.load(None)?, Command::Fit),
        Cmd::Backtest { common } => (common.load(None)?, Command::Backtest),
        Cmd::Mcs { common } => (common.load(None)?, Command::Mcs),
        Cmd::WeightsPlot { common, params, points } => {
            let mut cfg = common.load(None)?;
            if !params.is_empty() {
                cfg.weights_plot = WeightsPlotSection { params, ..cfg.weights_plot };
            }
            if let Some(p) = points {
                cfg.weights_plot.points = p;
            }
            (cfg, Command::WeightsPlot)
        }
    };
    run(&cfg, command)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let err = CliError::validation(e.kind().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match execute(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mvfusion_core::expcli::{
    cmd_impute, cmd_selfcheck, cmd_sweep, cmd_train, exit_code, load_config, selfcheck::format_report,
    selfcheck_options, Overrides,
};
use mvfusion_core::Error;

#[derive(Parser)]
#[command(name = "mvfusion", version, about = "Multi-view variational fusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds (overrides `output.seeds`).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seeds: self.seeds.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed.
    Train(RunArgs),
    /// Run the labeled/missing-fraction grid.
    Sweep(RunArgs),
    /// Check gradients, bounds and identities numerically.
    Selfcheck {
        /// Accepted for symmetry with the other commands; unused.
        config: Option<PathBuf>,
        /// Smaller sample sizes.
        #[arg(long)]
        quick: bool,
    },
    /// Impute the missing view from a checkpoint.
    Impute(RunArgs),
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Train(a) => {
            let cfg = load_config(&a.config, &a.overrides()).with_context(|| format!("loading {}", a.config.display()))?;
            let outcomes = cmd_train(&cfg).context("train")?;
            for o in &outcomes {
                let acc = o.test_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
                println!("seed {}: test accuracy {acc}", o.seed);
            }
            println!("wrote {}", cfg.output.dir.display());
        }
        Command::Sweep(a) => {
            let cfg = load_config(&a.config, &a.overrides()).with_context(|| format!("loading {}", a.config.display()))?;
            let path = cmd_sweep(&cfg).context("sweep")?;
            println!("wrote {}", path.display());
        }
        Command::Selfcheck { quick, .. } => {
            let results = cmd_selfcheck(&selfcheck_options(quick)?).context("selfcheck")?;
            print!("{}", format_report(&results));
            if results.iter().any(|r| !r.passed) {
                return Ok(1);
            }
        }
        Command::Impute(a) => {
            let cfg = load_config(&a.config, &a.overrides()).with_context(|| format!("loading {}", a.config.display()))?;
            let path = cmd_impute(&cfg).context("impute")?;
            println!("wrote {}", path.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<Error>()).map_or(1, exit_code);
            ExitCode::from(code as u8)
        }
    }
}

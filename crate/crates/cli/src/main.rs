use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedfap_cli::{cmd_compare, cmd_extract, cmd_preprocess, cmd_run, cmd_synth, CliError};

#[derive(Parser)]
#[command(name = "fedfap", version, about = "Federated mood-inference experiment workbench")]
struct Cli {
    /// Worker threads for training and evaluation (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-country cohort of raw feature tables.
    Synth {
        /// Cohort spec (TOML); the built-in six-country cohort when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract window features from raw sensor event logs.
    Extract {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Half window width in milliseconds.
        #[arg(long)]
        half_width_ms: Option<i64>,
    },
    /// Prune, impute and fold-plan raw feature tables.
    Preprocess {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and evaluate the configured method on preprocessed data.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare metrics reports country by country.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth { config, out, seed } => {
            cmd_synth(config.as_deref(), &out, seed)?;
        }
        Command::Extract { data, out, half_width_ms } => {
            cmd_extract(&data, &out, half_width_ms)?;
        }
        Command::Preprocess { config, data, out, seed } => {
            cmd_preprocess(config.as_deref(), &data, &out, seed)?;
        }
        Command::Run { config, data, out, seed } => {
            let outputs = cmd_run(config.as_deref(), &data, &out, seed)?;
            for r in &outputs.reports {
                let auroc = r.overall.macro_auroc.map_or_else(|| "NA".to_string(), |a| format!("{a:.4}"));
                println!("{}\tmacro AUROC {auroc}", r.label());
            }
        }
        Command::Compare { reports, out } => {
            let table = cmd_compare(&reports, &out)?;
            println!("{}", table.header().join(","));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

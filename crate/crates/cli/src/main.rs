//! `treediff`: sampling, noising, edit paths, rendering, datasets and search
//! from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Unsolved(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Unsolved(_) => 3,
            CliError::Internal(_) => 1,
        }
    }

    fn line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Unsolved(m) => ("unsolved", m),
            CliError::Internal(m) => ("internal", m),
        };
        format!("error[{kind}]: {}", msg.replace('\n', " "))
    }
}

#[derive(Parser, Debug)]
#[command(name = "treediff", version, about = "Syntax-tree diffusion for inverse graphics programs")]
struct Cli {
    /// TOML file with defaults for any flag; flags on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores); results do not depend on it
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print a random program with a bounded number of primitives
    Sample(SampleArgs),
    /// Apply random small mutations to a program
    Mutate(MutateArgs),
    /// Print the edit path between two programs as JSON
    Path(PathArgs),
    /// Render a program to PNG
    Render(RenderArgs),
    /// Write a training dataset (manifest.ndjson + images/)
    GenDataset(GenDatasetArgs),
    /// Write a complexity-filtered test set (instances.ndjson + images/)
    GenTestset(GenTestsetArgs),
    /// Recover a program from a target image with beam search
    Solve(SolveArgs),
    /// Solve rate against node expansions over a test set
    Eval(EvalArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let table = cli.config.as_deref().map(config::load).transpose()?;
    let jobs = match cli.jobs {
        Some(j) => Some(j),
        None => table
            .as_ref()
            .and_then(|t| t.get("jobs"))
            .map(|v| {
                v.as_integer()
                    .and_then(|i| usize::try_from(i).ok())
                    .ok_or_else(|| CliError::Usage("config key `jobs` must be a positive integer".into()))
            })
            .transpose()?,
    };
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let t = table.as_ref();
    match cli.command {
        Command::Sample(a) => sample(config::merge(a, t, "sample")?),
        Command::Mutate(a) => mutate(config::merge(a, t, "mutate")?),
        Command::Path(a) => path(config::merge(a, t, "path")?),
        Command::Render(a) => render(config::merge(a, t, "render")?),
        Command::GenDataset(a) => gen_dataset(config::merge(a, t, "gen-dataset")?),
        Command::GenTestset(a) => gen_testset(config::merge(a, t, "gen-testset")?),
        Command::Solve(a) => solve(config::merge(a, t, "solve")?),
        Command::Eval(a) => eval(config::merge(a, t, "eval")?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.line());
            return ExitCode::from(err.code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code())
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use nmfg_cli::config::{self, ConfigError, RunConfig};
use nmfg_cli::{presets, report, run, Stage};

#[derive(Parser)]
#[command(
    name = "nmfg",
    version,
    about = "Multi-class mean-field game traffic solver"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Source {
    /// TOML configuration file.
    config: Option<PathBuf>,
    /// Use a built-in preset instead of a file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Overrides `output_dir`.
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the macroscopic continuation ladder.
    Solve(Source),
    /// Solve, then validate against microscopic best responses.
    Bridge(Source),
    /// Check a configuration and print it with every default filled in.
    Validate(Source),
    /// Summarize the artifacts in an output directory.
    Report { dir: PathBuf },
    /// List the built-in presets.
    Presets,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;

fn load(src: &Source) -> Result<RunConfig, ConfigError> {
    let mut raw = match (&src.config, &src.preset) {
        (Some(path), _) => config::load_config(path)?,
        (None, Some(name)) => {
            config::parse_config(&format!("preset = {}\n", toml::Value::from(name.as_str())))?
        }
        (None, None) => {
            return Err(ConfigError::Invalid(vec![
                "give a configuration file or --preset".into(),
            ]));
        }
    };
    if let Some(dir) = &src.output_dir {
        raw.output_dir = dir.clone();
    }
    Ok(raw)
}

fn solve(src: &Source, stage: Stage) -> Result<ExitCode> {
    let cfg = match load(src).and_then(config::validate) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let summary = run(&cfg, stage)?;
    print!("{}", report::summarize(&summary.output_dir)?);
    Ok(if summary.succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_SOLVER)
    })
}

fn main_inner() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Solve(src) => solve(&src, Stage::Macro),
        Cmd::Bridge(src) => solve(&src, Stage::Bridge),
        Cmd::Validate(src) => match load(&src).and_then(config::validate) {
            Ok(c) => {
                print!("{}", toml::to_string(&c.raw)?);
                Ok(ExitCode::SUCCESS)
            }
            Err(e) => {
                eprintln!("{e}");
                Ok(ExitCode::from(EXIT_CONFIG))
            }
        },
        Cmd::Report { dir } => {
            if !dir.is_dir() {
                bail!("{} is not a directory", dir.display());
            }
            print!("{}", report::summarize(&dir)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Presets => {
            for n in presets::names() {
                println!("{n}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

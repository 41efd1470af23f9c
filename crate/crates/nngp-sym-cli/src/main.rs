//! Command-line front end. Every run writes its outputs, the resolved
//! `config.txt` and a `manifest.json` into the output directory.

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{parse_override, CliError, CliResult, Defaults, ExperimentConfig, Profile};

#[derive(Parser, Debug)]
#[command(name = "nngp-sym", version, about = "NNGP kernel symmetry experiments")]
struct Cli {
    /// `key=value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Smoke)]
    profile: Profile,
    /// Override one config key, e.g. `--set l=12`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Sample a token dataset from the HMM mixture.
    Generate,
    /// GP learning curves with equivalent-kernel overlays.
    LearningCurve,
    /// Empirical kernel spectra across context lengths and their slopes.
    Spectrum,
    /// Fourier-block symmetry report of a token corpus.
    Corpus,
    /// Multilinear decomposition table and rank check.
    Symcheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::LearningCurve => "learning-curve",
            Command::Spectrum => "spectrum",
            Command::Corpus => "corpus",
            Command::Symcheck => "symcheck",
        }
    }

    fn defaults(self) -> Defaults {
        match self {
            Command::Generate => commands::GENERATE,
            Command::LearningCurve => commands::LEARNING_CURVE,
            Command::Spectrum => commands::SPECTRUM,
            Command::Corpus => commands::CORPUS,
            Command::Symcheck => commands::SYMCHECK,
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let overrides = cli
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<CliResult<Vec<_>>>()?;
    let cfg = ExperimentConfig::resolve(cli.cmd.defaults(), cli.profile, cli.config.as_deref(), &overrides)?;
    if let Some(t) = cli.threads {
        if t == 0 {
            return config::validation("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Validation(format!("cannot create output directory {}: {e}", cli.out.display())))?;
    let out = cli.out.as_path();
    let files = match cli.cmd {
        Command::Generate => commands::generate(&cfg, cli.seed, out)?,
        Command::LearningCurve => commands::learning(&cfg, cli.seed, out)?,
        Command::Spectrum => commands::spectrum(&cfg, cli.seed, out)?,
        Command::Corpus => commands::corpus(&cfg, cli.seed, out)?,
        Command::Symcheck => commands::symcheck(&cfg, out)?,
    };
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let manifest = json!({
        "tool": "nngp-sym",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cli.cmd.name(),
        "profile": cli.profile.name(),
        "seed": cli.seed,
        "config": cfg.values,
        "outputs": files,
        "rerun": format!(
            "nngp-sym {} --profile {} --seed {} --config config.txt --out .",
            cli.cmd.name(),
            cli.profile.name(),
            cli.seed
        ),
    });
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("json") + "\n",
    )?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

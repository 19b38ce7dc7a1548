use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qlink::harness::{load_config, run, Command, ExperimentConfig, RunOptions, DEFAULT_PROFILE, VERSION};
use qlink::Error;

/// Default output directory when neither `--out` nor `output.directory` is set.
const OUT_DIR_ENV: &str = "QLINK_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "qlink",
    about = "Simulate and analyse a deterministic microwave quantum link"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run one experiment and write its datasets, summary and manifest.
    Run {
        /// fig3, fig4_process, fig4_bell, figS5, lag_scan, waveguide or projected.
        command: Command,
        /// TOML configuration; omitted keys come from its profile.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed, overriding `seeds.master`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a configuration file without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the toolkit version.
    Version,
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Validation { .. } | Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(3),
    }
}

fn config(path: Option<&PathBuf>) -> qlink::Result<ExperimentConfig> {
    match path {
        Some(p) => load_config(p),
        None => ExperimentConfig::profile(DEFAULT_PROFILE),
    }
}

fn execute(verb: Verb) -> qlink::Result<()> {
    match verb {
        Verb::Run {
            command,
            config: path,
            seed,
            out,
            jobs,
        } => {
            let cfg = config(path.as_ref())?;
            let out_dir = out
                .or_else(|| cfg.output.directory.clone())
                .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("qlink-out"));
            if jobs == Some(0) {
                return Err(Error::Config("--jobs must be at least 1".into()));
            }
            let manifest = run(
                command,
                &cfg,
                &RunOptions {
                    seed,
                    out_dir: out_dir.clone(),
                    jobs,
                },
            )?;
            let summary = serde_json::to_string_pretty(&manifest.summary).map_err(|e| Error::Parse(e.to_string()))?;
            println!("{summary}");
            eprintln!(
                "{command}: {} artifacts in {} ({:.1} s)",
                manifest.artifacts.len(),
                out_dir.display(),
                manifest.wall_time_s
            );
            Ok(())
        }
        Verb::Validate { config: path } => {
            let cfg = load_config(&path)?;
            println!(
                "{}: valid (profile {}, hash {})",
                path.display(),
                cfg.profile,
                cfg.hash()
            );
            Ok(())
        }
        Verb::Version => {
            println!("qlink {VERSION}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

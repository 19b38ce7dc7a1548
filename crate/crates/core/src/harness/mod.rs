//! Configuration, seeding and the experiment commands.

mod commands;
mod config;
mod fig4;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_text;

pub use config::{
    load_config, ExperimentConfig, Format, LinkConfig, NodeConfig, OutputConfig, PulseConfig, ReadoutConfig,
    ReadoutMode, SeedConfig, SweepConfig, TomographyConfig, WaveguideConfig, DEFAULT_PROFILE, PROFILES,
};
pub use fig4::{
    bell_experiment, bell_output, process_experiment, transfer_output, BellEstimate, BellRun, ProcessEstimate,
    ProcessRun, ReadoutChain, TomographySettings,
};

pub use commands::untruncated_control;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Per-task seed: the first eight bytes of SHA-256(master ‖ task path), so
/// parallel work is reproducible regardless of scheduling.
pub fn task_seed(master: u64, task: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(task.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Fig3,
    Fig4Process,
    Fig4Bell,
    #[serde(rename = "figS5")]
    FigS5,
    LagScan,
    Waveguide,
    Projected,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Fig3,
        Command::Fig4Process,
        Command::Fig4Bell,
        Command::FigS5,
        Command::LagScan,
        Command::Waveguide,
        Command::Projected,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Fig3 => "fig3",
            Command::Fig4Process => "fig4_process",
            Command::Fig4Bell => "fig4_bell",
            Command::FigS5 => "figS5",
            Command::LagScan => "lag_scan",
            Command::Waveguide => "waveguide",
            Command::Projected => "projected",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Command::ALL.iter().map(|c| c.as_str()).collect();
            Error::Argument(format!("unknown command `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides `seeds.master`.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub status: RunStatus,
    pub config_hash: String,
    pub seed: u64,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
    pub wall_time_s: f64,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Headline metrics, identical to `<command>_summary.json`.
    pub summary: serde_json::Value,
}

/// Collects the files a command writes.
pub(crate) struct Artifacts<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &'a Path) -> Self {
        Self {
            dir,
            written: Vec::new(),
        }
    }

    pub(crate) fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        write_text(self.dir.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub(crate) fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }
}

/// Run one command, writing its datasets, `<command>_summary.json` and
/// `<command>_manifest.json` to `opts.out_dir`. A manifest is written even
/// when the run fails.
pub fn run(command: Command, config: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    config.validate()?;
    let seed = opts.seed.unwrap_or(config.seeds.master);
    let mut cfg = config.clone();
    cfg.seeds.master = seed;
    let started = Instant::now();
    let mut artifacts = Artifacts::new(&opts.out_dir);
    let outcome = match opts.jobs {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| Error::Argument(format!("cannot start {k} workers: {e}")))?;
            pool.install(|| commands::dispatch(command, &cfg, &mut artifacts))
        }
        None => commands::dispatch(command, &cfg, &mut artifacts),
    };
    let outcome = outcome.and_then(|summary| {
        artifacts.json(&format!("{command}_summary.json"), &summary)?;
        Ok(summary)
    });
    let (status, error, summary) = match &outcome {
        Ok(s) => (RunStatus::Completed, None, s.clone()),
        Err(e) => (RunStatus::Failed, Some(e.to_string()), serde_json::Value::Null),
    };
    let manifest = RunManifest {
        command,
        status,
        config_hash: config.hash(),
        seed,
        artifacts: artifacts.written.clone(),
        wall_time_s: started.elapsed().as_secs_f64(),
        version: VERSION.to_string(),
        error,
        summary,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    write_text(opts.out_dir.join(format!("{command}_manifest.json")), &(text + "\n"))?;
    outcome.map(|_| manifest)
}

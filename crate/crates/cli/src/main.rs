use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rfmp::pipeline::{run, RunConfig, RunManifest, Stage};
use rfmp::Error;

/// Investor segmentation pipeline: synthetic data, RFMP features,
/// k-prototypes clustering, validity sweep, t-SNE and cluster statistics.
#[derive(Debug, Parser)]
#[command(name = "rfmp", version)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; per-stage seeds are derived from it unless set explicitly.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override any configuration key, e.g. `--set k=5` or `--set seeds.embed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (same as `--set output_dir=...`).
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Increase log verbosity.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic client and transaction population.
    Synth,
    /// Clean client and transaction tables.
    Ingest,
    /// Build the feature matrix.
    Features,
    /// Fit k-prototypes with a fixed or previously selected k.
    Cluster,
    /// Sweep k and score each fit with Silhouette and Davies-Bouldin.
    Sweep,
    /// Exact t-SNE of the clustered clients.
    Embed,
    /// Per-cluster risk-tolerance tests and monthly trade series.
    Stats,
    /// Stratified heat-map table.
    Report,
    /// Every configured stage in order.
    Run,
    /// Re-check the checksums recorded in an output directory's manifest.
    Verify,
}

fn stage_of(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Synth => Stage::Synth,
        Command::Ingest => Stage::Ingest,
        Command::Features => Stage::Features,
        Command::Cluster => Stage::Cluster,
        Command::Sweep => Stage::Sweep,
        Command::Embed => Stage::Embed,
        Command::Stats => Stage::Stats,
        Command::Report => Stage::Report,
        Command::Run | Command::Verify => return None,
    })
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, Error> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("override `{s}` is not KEY=VALUE")))
        })
        .collect()
}

fn execute(cli: &Cli) -> Result<RunManifest, Error> {
    let mut overrides = parse_overrides(&cli.overrides)?;
    if let Some(o) = &cli.output {
        overrides.push((
            "output_dir".into(),
            format!("\"{}\"", o.display().to_string().replace('\\', "\\\\")),
        ));
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides, cli.seed)?;
    if let Some(stage) = stage_of(&cli.command) {
        cfg.stages = vec![stage];
    }
    if let Command::Verify = cli.command {
        let manifest = RunManifest::read(&cfg.output_dir)?;
        let bad = manifest.verify(&cfg.output_dir)?;
        if !bad.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "checksum mismatch: {}",
                bad.join(", ")
            )));
        }
        return Ok(manifest);
    }
    run(&cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(manifest) if manifest.succeeded() => ExitCode::SUCCESS,
        Ok(manifest) => {
            for s in manifest.stages.iter().filter(|s| s.error.is_some()) {
                eprintln!(
                    "stage {} failed: {}",
                    s.stage,
                    s.error.as_deref().unwrap_or_default()
                );
            }
            ExitCode::from(1)
        }
        Err(Error::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

//! Command-line front end: config loading, the four workflows and the
//! result bundle they write.

pub mod commands;
pub mod config;
pub mod output;
pub mod plots;

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use toml::Value;

use config::{render_flat, RunConfig};
use output::Bundle;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{name}: {err}", name = .0.name(), err = .0)]
    Core(#[from] spillfree_core::Error),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 2 config, 3 infeasibility, 4 numerical or i/o failure.
    pub fn exit_code(&self) -> i32 {
        use spillfree_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_infeasibility() => 3,
            CliError::Core(E::InvalidParameter { .. } | E::ElasticityDominanceViolated { .. } | E::DimensionMismatch(_)) => 2,
            CliError::Core(_) => 4,
            CliError::Infeasible(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Controller synthesis: gain.csv, riccati.csv
    Synth,
    /// Minimal gamma over a range of controlled modes: sweep.csv
    Sweep,
    /// Residue certificate for the modes left out: residue.csv
    Residue,
    /// Time-domain run: trace.csv, costs.csv, field.csv
    Sim,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Sweep => "sweep",
            Command::Residue => "residue",
            Command::Sim => "sim",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "spillfree", version, about = "Spillover-free H-infinity control of a damped beam")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Config file (dotted-key TOML); a bundle's manifest.toml also works
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides output_dir)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// key=value, applied after the config file; repeatable
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

/// Effective config echoed as dotted keys, plus ignored `manifest.*` keys.
pub fn manifest_text(cmd: Command, cfg: &RunConfig) -> String {
    let mut flat = cfg.to_flat();
    flat.insert("manifest.command".into(), Value::String(cmd.name().into()));
    flat.insert(
        "manifest.version".into(),
        Value::String(env!("CARGO_PKG_VERSION").into()),
    );
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    flat.insert("manifest.created_unix".into(), Value::Integer(now as i64));
    if let Ok(nd) = cfg.beam.resolve() {
        for (k, v) in [
            ("c1", nd.c1),
            ("c2", nd.c2),
            ("x_left", nd.x_left),
            ("x_right", nd.x_right),
            ("space_scale", nd.a1),
            ("time_scale", nd.a2),
        ] {
            flat.insert(format!("manifest.nondimensional.{k}"), Value::Float(v));
        }
    }
    format!("# spillfree run manifest; rerun with --config manifest.toml\n{}", render_flat(&flat))
}

/// Runs one command and returns the summary text.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let mut cfg = config::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    let mut bundle = Bundle::create(&cfg.output_dir)?;
    bundle.write("manifest.toml", &manifest_text(cli.command, &cfg))?;
    let outcome = commands::run(cli.command, &cfg, &mut bundle);
    if cfg.plots {
        plots::write(cli.command, &mut bundle)?;
    }
    match &outcome {
        Ok(()) => bundle.note("status: ok"),
        Err(e) => bundle.note(format!("status: failed ({e})")),
    }
    bundle.finish_summary()?;
    outcome.map(|()| bundle.summary.clone())
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

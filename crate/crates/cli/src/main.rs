//! `mmcf`: batch driver for the flow solver and the estimate checks.
//!
//! Exit codes: 0 when every check passes, 2 when a check fails or the numerics
//! break down, 1 on usage, configuration or IO errors.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use crate::commands::{execute, thread_count, Run, UsageError};
use crate::config::{Command, RunConfig};
use crate::output::{Meta, Writer};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CommandArg {
    Simulate,
    Verify,
    Exhaust,
    Barriers,
    Convergence,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::Simulate => Command::Simulate,
            CommandArg::Verify => Command::Verify,
            CommandArg::Exhaust => Command::Exhaust,
            CommandArg::Barriers => Command::Barriers,
            CommandArg::Convergence => Command::Convergence,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mmcf", version, about = "Modified mean curvature flow of radial graphs: simulations and estimate checks")]
struct Cli {
    /// Command to run; defaults to the config's `command` key.
    command: Option<CommandArg>,
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Refine the configured grid this many dyadic levels.
    #[arg(long, default_value_t = 0)]
    resolution_override: u32,
}

enum Failure {
    Usage(String),
    /// The numerics broke down (instability, lost graph condition).
    Numerical(String),
    Io(String),
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", cli.config.display())))?;
    let base = cli.config.parent().map(PathBuf::from).unwrap_or_default();
    let cfg = RunConfig::parse(&text, &base).map_err(|e| Failure::Usage(format!("{}: {e}", cli.config.display())))?;
    let cmd = match (cli.command.map(Command::from), cfg.command) {
        (Some(a), Some(b)) if a != b => {
            return Err(Failure::Usage(format!(
                "command `{}` conflicts with `command = {}` in the config",
                a.name(),
                b.name()
            )))
        }
        (Some(c), _) | (None, Some(c)) => c,
        (None, None) => return Err(Failure::Usage("no command given on the command line or in the config".into())),
    };
    let threads = thread_count(std::env::var("MMCF_THREADS").ok().as_deref()).map_err(|e| Failure::Usage(e.to_string()))?;
    let dir = cli.out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("mmcf_out"));
    let meta = Meta::new(&text, cmd.name(), cli.resolution_override);
    let classify = |e: anyhow::Error| {
        if let Some(u) = e.downcast_ref::<UsageError>() {
            Failure::Usage(u.0.clone())
        } else if e.downcast_ref::<mmcf::MmcfError>().is_some() {
            Failure::Numerical(format!("{e:#}"))
        } else {
            Failure::Io(format!("{e:#}"))
        }
    };
    let out = Writer::new(&dir, meta).map_err(classify)?;
    let mut r = Run { cfg: &cfg, refine: cli.resolution_override, threads, out };
    let passed = execute(cmd, &mut r).map_err(classify)?;
    println!(
        "{}: {} ({} file(s) in {}, config sha256 {})",
        cmd.name(),
        if passed { "all checks passed" } else { "checks FAILED" },
        r.out.written().len(),
        dir.display(),
        &r.out.meta().config_sha256[..12]
    );
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(Failure::Usage(m) | Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("run failed: {m}");
            ExitCode::from(2)
        }
    }
}

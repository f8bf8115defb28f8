//! `mmp <task> --config <file> [--seed S] [--out DIR]`
//!
//! Exit codes: 0 pass, 1 property failure, 2 invalid input or I/O error,
//! 3 guard exceeded.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::json;

mod config;
mod tasks;

use config::{ExperimentConfig, Task};

#[derive(Parser, Debug)]
#[command(name = "mmp", version, about = "Mass-migration process experiments")]
struct Cli {
    task: Task,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `output` in the config, then `mmp-out/<task>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("mmp-out").join(cli.task.name()));
    match std::env::var_os("MMP_OUT_ROOT") {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

fn write_outputs(dir: &PathBuf, files: &[(String, String)]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for (name, text) in files {
        fs::write(dir.join(name), text)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid config: {e}");
            return ExitCode::from(2);
        }
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if let Err(e) = cfg.validate(cli.task) {
        eprintln!("invalid config: {e}");
        return ExitCode::from(2);
    }

    let started = Instant::now();
    let outcome = match tasks::run(cli.task, &cfg) {
        Ok(o) => o,
        Err(f) => {
            eprintln!("{f}");
            return ExitCode::from(f.exit_code());
        }
    };
    let wall_ms = started.elapsed().as_millis();

    let dir = output_dir(&cli, &cfg);
    let mut files = vec![
        ("report.json".to_string(), serde_json::to_string_pretty(&outcome.report).unwrap_or_default() + "\n"),
        ("summary.txt".to_string(), outcome.summary.clone()),
        ("config.toml".to_string(), cfg.to_toml()),
    ];
    files.extend(outcome.data.iter().cloned());
    let manifest = json!({
        "task": cli.task.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "pass": outcome.pass,
        "wall_ms": wall_ms,
        "files": files.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
    });
    files.push(("manifest.json".to_string(), serde_json::to_string_pretty(&manifest).unwrap_or_default() + "\n"));
    if let Err(e) = write_outputs(&dir, &files) {
        eprintln!("cannot write to {}: {e}", dir.display());
        return ExitCode::from(2);
    }

    print!("{}", outcome.summary);
    println!("{} ({})", if outcome.pass { "PASS" } else { "FAIL" }, dir.display());
    if outcome.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

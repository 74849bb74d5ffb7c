use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ring_bifurcate::cli::{failed_checks, run, CliError, Command};
use ring_bifurcate::config::RunConfig;

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    Ring,
    Equilibria,
    Scan,
    Continue,
    Verify,
}

/// Bifurcation analysis of the satellite and Maxwell-ring n-body problems.
#[derive(Parser)]
#[command(name = "ring-bifurcate", version)]
struct Args {
    command: Cmd,
    /// key = value configuration file
    #[arg(long)]
    config: PathBuf,
    /// output directory (overrides `out`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// event table row to continue (overrides `event`)
    #[arg(long)]
    event: Option<usize>,
    /// continuation steps (overrides `steps`)
    #[arg(long)]
    steps: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &Args) -> Result<(), CliError> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(e) = args.event {
        cfg.event = e;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    let cmd = match args.command {
        Cmd::Ring => Command::Ring,
        Cmd::Equilibria => Command::Equilibria,
        Cmd::Scan => Command::Scan,
        Cmd::Continue => Command::Continue,
        Cmd::Verify => Command::Verify,
    };
    let outputs = run(cmd, &cfg)?;
    outputs.write(&cfg.out)?;
    for (name, _) in &outputs.files {
        println!("{}", cfg.out.join(name).display());
    }
    if let Some(v) = outputs.get("verify.csv") {
        let failed = failed_checks(v);
        if !failed.is_empty() {
            return Err(CliError::Verification(failed.join(", ")));
        }
    }
    Ok(())
}

mod args;
mod commands;
mod draws;
mod run;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use run::{Run, EXIT_VALIDATION};

fn execute(command: &Command, run: &mut Run) -> anyhow::Result<()> {
    let opts = command.run_opts();
    let cfg = commands::load_config(opts.config.as_deref(), run)?;
    if let Some(n) = opts.threads.or(cfg.threads) {
        if n == 0 {
            return Err(run::invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global()?;
    }
    match command {
        Command::Adjacency(a) => commands::adjacency(a, &cfg, run),
        Command::Ingest(a) => commands::ingest(a, &cfg, run),
        Command::Esda(a) => commands::esda(a, &cfg, run),
        Command::FitSpatial(a) => commands::fit_spatial_cmd(a, &cfg, run),
        Command::FitSt(a) => commands::fit_st_cmd(a, &cfg, run),
        Command::Select(a) => commands::select(a, &cfg, run),
        Command::Diagnose(a) => commands::diagnose(a, &cfg, run),
        Command::Simulate(a) => commands::simulate(a, &cfg, run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let out_dir = &cli.command.run_opts().out_dir;
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create output directory {}: {e}", out_dir.display());
        return ExitCode::from(EXIT_VALIDATION);
    }
    let mut run = Run::new(cli.command.name(), out_dir);
    let result = execute(&cli.command, &mut run);
    ExitCode::from(run.finish(result))
}

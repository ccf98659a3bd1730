use std::process::ExitCode;

use clap::Parser;
use trajguard_cli::args::{Cli, Command};
use trajguard_cli::commands::{self, EXIT_ERROR};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Validate(a) => a.resolve(false).and_then(|c| commands::validate(&c)),
        Command::Supervise(a) => a.resolve(true).and_then(|c| commands::supervise(&c)),
        Command::Publish(a) => a.resolve(false).and_then(|c| commands::publish(&c)),
        Command::Bench(b) => b
            .common
            .resolve(false)
            .and_then(|c| commands::bench(&c, b.runs, b.per_run)),
        Command::Gen(g) => g
            .config()
            .and_then(|c| commands::gen(&c, &g.params(), &g.out, g.with_path)),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

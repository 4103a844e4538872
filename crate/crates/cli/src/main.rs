use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = conceptmap::Cli::parse();
    if let Err(e) = conceptmap::init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match conceptmap::dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

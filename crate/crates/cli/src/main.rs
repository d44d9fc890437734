use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = etiobench::Cli::parse();
    let result = etiobench::commands::init_threads().and_then(|()| etiobench::run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = emhrnn_cli::Cli::parse();
    let stdout = std::io::stdout();
    match emhrnn_cli::run(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

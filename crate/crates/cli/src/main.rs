use std::process::ExitCode;

use clap::Parser;
use splinesplat_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match splinesplat_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (category, code) = splinesplat_cli::error_category(&err);
            let message = format!("{err:#}").replace('\n', " ");
            eprintln!("error[{category}]: {message}");
            ExitCode::from(code as u8)
        }
    }
}

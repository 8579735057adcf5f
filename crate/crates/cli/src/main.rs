use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use fusurv::Cli;

fn one_line(text: &str) -> String {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            // clap's usage block spans several lines; keep the first.
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            eprintln!("fusurv: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match fusurv::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fusurv: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}

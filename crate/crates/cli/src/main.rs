use std::process::ExitCode;

use barrierflow_cli::error::{EXIT_CONFIG, EXIT_OK};
use barrierflow_cli::{dispatch, Cli, CliError};
use clap::error::ErrorKind;
use clap::Parser;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::from(EXIT_OK);
        }
        Err(e) => {
            let err = CliError::Config(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match dispatch(cli) {
        Ok(outcome) => {
            println!(
                "{}",
                serde_json::json!({
                    "out": outcome.out_dir,
                    "classification": outcome.summary.get("classification"),
                })
            );
            ExitCode::from(EXIT_OK)
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}

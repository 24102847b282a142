use std::io::Write;
use std::process::ExitCode;

use chimera::commands::{run, threads_from_env, Cli};
use chimera::CliError;
use clap::error::ErrorKind;
use clap::Parser;

fn fail(err: &CliError) -> ExitCode {
    eprintln!("error[{}]: {err}", err.code());
    ExitCode::from(err.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage.argument]: {first}");
            eprintln!("(run with --help for the full usage)");
            return ExitCode::from(2);
        }
    };
    let threads = match threads_from_env() {
        Ok(n) => n,
        Err(e) => return fail(&e),
    };
    match run(&cli, threads) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            let _ = write!(stdout, "{}{}", outcome.stdout, outcome.report.summary());
            let failed = outcome.report.failures();
            if failed > 0 {
                return fail(&CliError::ChecksFailed { failed, total: outcome.report.checks.len() });
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

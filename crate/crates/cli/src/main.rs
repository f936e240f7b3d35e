use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = match rtf_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: bad usage"));
            return ExitCode::from(rtf_cli::EXIT_USAGE);
        }
    };
    let mut out = std::io::stdout().lock();
    match rtf_cli::run(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", rtf_cli::diagnostic(&e));
            ExitCode::from(rtf_cli::exit_code(&e))
        }
    }
}

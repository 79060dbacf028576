use std::process::ExitCode;

use clap::Parser;
use fibsh::args::Cli;
use fibsh::{commands, exit, exit_code};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.global.log_level)
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.global.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(exit::CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(exit::CONFIG);
        }
    }
    match commands::run(cli) {
        Ok(outcome) if outcome.assert_checks && outcome.violations() > 0 => {
            eprintln!("{} expected properties did not hold", outcome.violations());
            ExitCode::from(exit::ASSERTION)
        }
        Ok(_) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use clap::error::ErrorKind;
use clap::Parser;
use std::error::Error as _;

use memelab::cli::{run, Cli};

fn main() {
    // Exit codes: 0 success (including --help/--version), 1 usage problems,
    // 2 pipeline failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap routes help to stdout and diagnostics to stderr.
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let mut source = e.source();
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(e.exit_code());
    }
}

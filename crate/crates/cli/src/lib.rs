//! Command-line front end for `volsmile-core`: quote files, run settings,
//! reports, plots and the subcommands that tie them together.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod quotes;
pub mod report;
pub mod svg;

pub use cli::Cli;
pub use commands::Session;
pub use error::{CliError, Exit};

/// Runs a parsed command line, reporting errors on stderr.
pub fn run(cli: &Cli) -> Exit {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = Session::new(cli.global.clone()).and_then(|s| s.run(&cli.command, &mut out));
    match result {
        Ok(exit) => exit,
        Err(e) => {
            eprintln!("volsmile: {e}");
            e.exit()
        }
    }
}

use clap::Parser;

use fourdkit::cli::{run, Cli, EXIT_DEGENERATE_ALIGNMENT, EXIT_FAILURE};
use fourdkit::Error;

fn main() {
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::DegenerateAlignment) {
                EXIT_DEGENERATE_ALIGNMENT
            } else {
                EXIT_FAILURE
            }
        }
    };
    std::process::exit(code);
}

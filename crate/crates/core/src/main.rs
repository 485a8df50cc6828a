use clap::Parser;

use cdpinn::cli::{run, Cli};
use cdpinn::Error;

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("cdpinn: {e}");
        let code = match e {
            Error::Config(_) => 2,
            Error::Numeric { .. } => 3,
            Error::Io(_) | Error::Csv(_) => 4,
            _ => 1,
        };
        std::process::exit(code);
    }
}

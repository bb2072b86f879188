use clap::Parser;

use otpt_lab::cli::{dispatch, Cli};
use otpt_lab::exit_code_for;

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(&cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code_for(&err));
    }
}

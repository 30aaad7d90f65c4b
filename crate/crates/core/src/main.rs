use clap::Parser;

use geopcs::cli::{exit_code, run, Cli, Outcome};

fn main() {
    let cli = Cli::parse();
    let result = run(cli);
    match &result {
        Ok(Outcome::Ok) => {}
        Ok(Outcome::CheckFailed(msg)) => eprintln!("error: {msg}"),
        Err(e) => eprintln!("error: {e}"),
    }
    std::process::exit(exit_code(&result));
}

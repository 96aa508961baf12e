use clap::Parser;

use embedded_eigs_cli::{run, Cli, EXIT_ERROR};

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprint!("{}", e.record());
            EXIT_ERROR
        }
    };
    std::process::exit(code);
}

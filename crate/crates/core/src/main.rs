use clap::Parser;
use pnp_core::cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = execute(cli) {
        eprintln!("pnp: {e}");
        std::process::exit(e.exit_code());
    }
}

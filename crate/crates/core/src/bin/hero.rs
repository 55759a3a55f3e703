use clap::Parser;

use hero_core::cli::{run, Cli, EXIT_INTERNAL};

fn main() {
    let cli = Cli::parse();
    let code = std::panic::catch_unwind(|| run(cli)).unwrap_or(EXIT_INTERNAL);
    std::process::exit(code);
}

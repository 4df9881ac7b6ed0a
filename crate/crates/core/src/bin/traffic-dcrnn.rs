use clap::Parser;
use traffic_dcrnn::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}

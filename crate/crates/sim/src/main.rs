use clap::Parser;
use vns_sim::cli::{main_with, Cli};

fn main() {
    std::process::exit(main_with(Cli::parse()));
}

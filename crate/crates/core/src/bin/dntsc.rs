use clap::Parser;

fn main() {
    if let Err(e) = dntsc::harness::cli::run(dntsc::harness::cli::Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

use clap::Parser;

fn main() {
    let cli = isocluster::cli::Cli::parse();
    std::process::exit(isocluster::cli::run(cli));
}

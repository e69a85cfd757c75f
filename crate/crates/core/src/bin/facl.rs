use clap::Parser;

fn main() {
    let cli = facl::cli::Cli::parse();
    std::process::exit(facl::cli::run(&cli));
}

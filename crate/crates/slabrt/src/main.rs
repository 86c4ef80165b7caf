use clap::Parser;

fn main() {
    let cli = slabrt::cli::Cli::parse();
    std::process::exit(slabrt::cli::execute(&cli));
}

use clap::Parser;

fn main() {
    let cli = datamin::cli::Cli::parse();
    std::process::exit(datamin::cli::run(cli));
}

use clap::Parser;

fn main() {
    let cli = mrnav::cli::Cli::parse();
    std::process::exit(mrnav::cli::run(cli));
}

use clap::Parser;

fn main() {
    let cli = emdloss::cli::Cli::parse();
    std::process::exit(emdloss::cli::run(cli));
}

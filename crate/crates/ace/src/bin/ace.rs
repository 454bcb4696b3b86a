use clap::Parser;

fn main() {
    let cli = ace::cli::Cli::parse();
    std::process::exit(ace::cli::run(cli));
}

use clap::Parser;

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let cli = dflab_cli::Cli::parse();
    std::process::exit(dflab_cli::run(&cli, argv));
}

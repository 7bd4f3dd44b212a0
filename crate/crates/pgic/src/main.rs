use clap::Parser;

fn main() {
    let cli = pgic::cli::Cli::parse();
    if let Err(e) = pgic::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

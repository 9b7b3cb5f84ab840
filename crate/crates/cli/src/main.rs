use clap::Parser;

fn main() {
    let cli = uvlc_cli::Cli::parse();
    if let Err(e) = uvlc_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(uvlc_cli::exit_code(&e));
    }
}

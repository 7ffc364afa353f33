use clap::Parser;

fn main() {
    let cli = sdm::cli::Cli::parse();
    match sdm::cli::run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::exit(e.code);
        }
    }
}

use clap::Parser;

fn main() {
    let cli = upbre::cli::Cli::parse();
    let result = upbre::cli::run(cli);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    std::process::exit(upbre::cli::exit_code(&result));
}

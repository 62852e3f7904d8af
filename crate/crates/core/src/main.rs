use clap::Parser;

fn main() {
    let cli = opl::cli::Cli::parse();
    match opl::cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}

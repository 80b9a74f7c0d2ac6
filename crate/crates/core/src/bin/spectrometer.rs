use clap::Parser;
use spectrometer::cli::{self, Cli};

fn main() {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            std::process::exit(if usage { 4 } else { 0 });
        }
    };
    if let Err(e) = cli::run(parsed) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

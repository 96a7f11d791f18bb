use clap::Parser;

use wfed_cli::{exit, run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
            std::process::exit(exit::OK);
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.code);
        }
    }
}

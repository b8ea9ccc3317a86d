use clap::Parser;

use dolhodge::cli::{self, Args};
use dolhodge::report;

fn main() {
    let args = Args::parse();
    match cli::threads_from_env() {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                let err = dolhodge::Error::Config(format!("cannot size the worker pool: {e}"));
                print!("{}", report::render(&report::error(Some(args.command), None, &err)));
                eprintln!("dolhodge: {err}");
                std::process::exit(err.exit_code());
            }
        }
        Ok(None) => {}
        Err(err) => {
            print!("{}", report::render(&report::error(Some(args.command), None, &err)));
            eprintln!("dolhodge: {err}");
            std::process::exit(err.exit_code());
        }
    }
    std::process::exit(cli::main_with(&args));
}

use clap::Parser;
use natscale::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            eprintln!("report: {}", outcome.report_path.display());
            if outcome.status != 0 {
                if let Some(msg) = outcome.report["result"].get("refused").or(outcome.report["result"].get("error")) {
                    eprintln!("natscale: {}", msg.as_str().unwrap_or_default());
                }
            }
            std::process::exit(outcome.status);
        }
        Err(e) => {
            eprintln!("natscale: {e}");
            std::process::exit(1);
        }
    }
}

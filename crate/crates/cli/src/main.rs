use std::process::ExitCode;

use clap::Parser;
use flowbundle_cli::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(m) => {
            println!("{}: {} artifacts", m.stage, m.artifacts.len());
            for a in &m.artifacts {
                println!("  {}", a.path);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.record()).expect("serializable error record"));
            ExitCode::from(e.exit_code())
        }
    }
}

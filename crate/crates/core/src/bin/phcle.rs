use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;
use phcle::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut log = io::stderr();
    match run(&cli, &mut out, &mut log) {
        Ok(()) => {
            let _ = out.flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = out.flush();
            let _ = writeln!(log, "error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

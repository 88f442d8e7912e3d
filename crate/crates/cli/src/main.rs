use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let args = match collab::Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(collab::run(args))
}

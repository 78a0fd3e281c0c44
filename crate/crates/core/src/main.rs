use std::process::ExitCode;

fn main() -> ExitCode {
    match ctxsd::cli::run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

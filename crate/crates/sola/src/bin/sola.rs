use std::process::ExitCode;

fn main() -> ExitCode {
    sola::cli::run()
}

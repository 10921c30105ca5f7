use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(hypercurv::cli::cli_main(std::env::args()) as u8)
}

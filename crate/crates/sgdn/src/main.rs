use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sgdn::cli::run(std::env::args_os()))
}

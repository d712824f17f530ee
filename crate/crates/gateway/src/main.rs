use std::process::ExitCode;

fn main() -> ExitCode {
    labelshed_gateway::cli::run(std::env::args_os())
}

use std::process::ExitCode;

fn main() -> ExitCode {
    pi_oracle::cli::main_with_args(std::env::args_os())
}

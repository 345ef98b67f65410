use std::process::ExitCode;

fn main() -> ExitCode {
    radval_cli::run(std::env::args_os())
}

use std::process::ExitCode;

fn main() -> ExitCode {
    leaftile_cli::main_with_args(std::env::args_os())
}

use std::process::ExitCode;

fn main() -> ExitCode {
    jascl::cli::main_with_args(std::env::args_os())
}

use std::process::ExitCode;

fn main() -> ExitCode {
    tfm_lab::main_with_args(std::env::args_os())
}

use std::process::ExitCode;

fn main() -> ExitCode {
    smilenet::parallel::init_from_env();
    smilenet::cli::run(std::env::args_os())
}

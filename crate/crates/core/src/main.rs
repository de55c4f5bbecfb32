use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::init();
    let code = robinp::cli::run_cli(std::env::args_os());
    ExitCode::from(code as u8)
}

use std::process::ExitCode;

fn main() -> ExitCode {
    match datml::cli::run_command(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

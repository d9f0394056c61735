use std::process::ExitCode;

fn main() -> ExitCode {
    match segse_cli::commands::main_with_args(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message.trim_end());
            ExitCode::from(e.code() as u8)
        }
    }
}

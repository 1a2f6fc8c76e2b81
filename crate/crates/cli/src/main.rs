use std::process::ExitCode;

fn main() -> ExitCode {
    match sgconv_cli::run(std::env::args_os().collect()) {
        Ok(outcome) => {
            print!("{}", outcome.report);
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(sgconv_cli::error::CliError::Failed(msg)) if msg.starts_with("Usage") || msg.contains("--help") => {
            print!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sgconv: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

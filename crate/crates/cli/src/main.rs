use std::process::ExitCode;

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    match painnet_cli::run(std::env::args_os(), &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(if e.category() == "usage" { 2 } else { 1 })
        }
    }
}

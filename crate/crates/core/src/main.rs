use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    if let Err(msg) = rdmkit::cli::configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(rdmkit::cli::EXIT_USAGE as u8);
    }
    let code = rdmkit::cli::run(std::env::args_os(), &mut io::stdout().lock(), &mut io::stderr().lock());
    ExitCode::from(code as u8)
}

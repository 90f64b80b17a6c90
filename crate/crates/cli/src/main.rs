use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    if let Err(e) = lattice_homog_cli::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let mut out = Vec::new();
    let mut err = std::io::stderr();
    let code = lattice_homog_cli::run(std::env::args_os(), &mut out, &mut err);
    // Output is written once, at the end.
    let _ = std::io::stdout().write_all(&out);
    ExitCode::from(code as u8)
}

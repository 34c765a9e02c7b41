use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(radial_sopf::cli::run(std::env::args()) as u8)
}

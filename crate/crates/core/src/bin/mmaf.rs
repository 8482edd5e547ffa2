use std::process::ExitCode;

fn main() -> ExitCode {
    let seed = std::env::var(mmaf::cli::SEED_ENV).ok();
    let code = mmaf::cli::main_with(std::env::args_os(), seed.as_deref());
    ExitCode::from(code.clamp(0, 255) as u8)
}

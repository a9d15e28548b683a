fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(guardian::cli::run(std::env::args_os()))
}

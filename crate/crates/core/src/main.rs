fn main() -> std::process::ExitCode {
    let code = wlln_lab::cli::main_with_args(std::env::args_os());
    std::process::ExitCode::from(code as u8)
}

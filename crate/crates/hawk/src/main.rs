fn main() -> std::process::ExitCode {
    hawk::cli::main_with_args(std::env::args_os())
}

fn main() -> std::process::ExitCode {
    krflow::cli::main_with_args(std::env::args_os())
}

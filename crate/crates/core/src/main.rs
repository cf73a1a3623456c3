fn main() -> std::process::ExitCode {
    aps_testbed::cli::main_with_args(std::env::args_os())
}

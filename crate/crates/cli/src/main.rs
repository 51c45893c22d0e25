fn main() -> std::process::ExitCode {
    anyshot_cli::run(std::env::args_os())
}

fn main() -> std::process::ExitCode {
    cincgan_cli::run(std::env::args_os())
}

fn main() -> std::process::ExitCode {
    rankforge::cli::run()
}

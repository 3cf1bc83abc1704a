fn main() -> std::process::ExitCode {
    themfit::cli::main()
}

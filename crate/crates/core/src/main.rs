fn main() -> std::process::ExitCode {
    selu::cli::main()
}

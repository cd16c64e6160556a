fn main() -> std::process::ExitCode {
    sccor_cli::main()
}

//! Same tool as `sccor`, built inside this package so the acceptance target
//! can spawn it. Cargo runs this package's tests after every other member's.

fn main() -> std::process::ExitCode {
    sccor_cli::main()
}

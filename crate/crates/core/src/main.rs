fn main() -> std::process::ExitCode {
    capbias::cli::main()
}

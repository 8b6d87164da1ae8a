fn main() -> std::process::ExitCode {
    ftnilo::cli::main()
}

fn main() -> std::process::ExitCode {
    treegram::cli::main()
}

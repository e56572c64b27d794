fn main() -> std::process::ExitCode {
    taxo_dng::cli::main()
}

fn main() -> std::process::ExitCode {
    possfilter::cli::main()
}

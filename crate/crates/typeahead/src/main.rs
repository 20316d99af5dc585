fn main() -> std::process::ExitCode {
    typeahead::cli::run()
}

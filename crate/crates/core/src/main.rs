fn main() -> std::process::ExitCode {
    selfrepel::cli::main_entry()
}

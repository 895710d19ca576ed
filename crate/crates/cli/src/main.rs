fn main() {
    std::process::exit(saltrust_cli::cli_run(std::env::args_os()));
}

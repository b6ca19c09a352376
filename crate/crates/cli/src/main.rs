fn main() {
    std::process::exit(novact_cli::cli::run(std::env::args_os()));
}

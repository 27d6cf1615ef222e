fn main() {
    std::process::exit(effmarket_cli::run(std::env::args_os()));
}

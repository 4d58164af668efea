fn main() {
    std::process::exit(psqkd::cli::run(std::env::args_os()));
}

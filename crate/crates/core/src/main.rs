fn main() {
    std::process::exit(wseg::cli::run(std::env::args_os()));
}

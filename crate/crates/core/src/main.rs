fn main() {
    std::process::exit(retrial::cli::run(std::env::args_os()));
}

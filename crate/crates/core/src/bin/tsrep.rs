fn main() {
    std::process::exit(tsrep::cli::run(std::env::args_os()));
}

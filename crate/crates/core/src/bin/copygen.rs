fn main() {
    std::process::exit(copygen::cli::run(std::env::args_os()));
}

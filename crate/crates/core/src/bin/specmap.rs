fn main() {
    std::process::exit(specmap::cli::run(std::env::args_os()));
}

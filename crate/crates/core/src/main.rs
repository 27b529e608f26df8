fn main() {
    std::process::exit(talfuse::cli::run(std::env::args_os()));
}

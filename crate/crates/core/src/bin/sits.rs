fn main() {
    std::process::exit(sits_core::cli::run(std::env::args_os()));
}

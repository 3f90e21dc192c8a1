fn main() {
    std::process::exit(sellopt::cli::run(std::env::args_os()));
}

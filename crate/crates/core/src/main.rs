fn main() {
    std::process::exit(e2ec::cli::run(std::env::args_os()));
}

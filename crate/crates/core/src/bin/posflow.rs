fn main() {
    std::process::exit(posflow::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(ohpl::cli::run(std::env::args_os()));
}

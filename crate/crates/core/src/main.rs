fn main() {
    std::process::exit(ramsey::cli::run(std::env::args_os()));
}

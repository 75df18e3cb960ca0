fn main() {
    std::process::exit(adaflow::cli::run(std::env::args_os()));
}

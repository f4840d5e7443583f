fn main() {
    std::process::exit(tugwar::cli::run(std::env::args_os()));
}

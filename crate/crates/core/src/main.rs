fn main() {
    std::process::exit(remi::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(rlbridge::cli::run(std::env::args_os()));
}

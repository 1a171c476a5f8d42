fn main() {
    std::process::exit(sphfield::cli::main_with_args(std::env::args().collect()));
}

fn main() {
    std::process::exit(infsample::cli::main_with_args(std::env::args().collect()));
}

fn main() {
    std::process::exit(fastslow::cli::run_cli(std::env::args()));
}

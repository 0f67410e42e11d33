fn main() {
    std::process::exit(bicausal::cli::run(std::env::args()));
}

fn main() {
    std::process::exit(rnnq::cli::run());
}

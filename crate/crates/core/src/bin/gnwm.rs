fn main() {
    std::process::exit(gnwm::cli::run());
}

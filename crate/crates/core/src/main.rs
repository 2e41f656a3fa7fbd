fn main() {
    std::process::exit(pacbound::cli::run());
}

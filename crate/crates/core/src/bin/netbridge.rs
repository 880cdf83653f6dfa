fn main() {
    std::process::exit(netbridge::cli::run());
}

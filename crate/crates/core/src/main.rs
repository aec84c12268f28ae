fn main() {
    std::process::exit(histoconv::cli::run());
}

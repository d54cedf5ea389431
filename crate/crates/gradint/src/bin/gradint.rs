fn main() {
    std::process::exit(gradint::cli::run());
}

fn main() {
    std::process::exit(eqlab::cli::run());
}

fn main() {
    std::process::exit(quantboost::cli::main());
}

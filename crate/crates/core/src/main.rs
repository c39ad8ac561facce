fn main() {
    std::process::exit(sparsecascade::cli::main());
}

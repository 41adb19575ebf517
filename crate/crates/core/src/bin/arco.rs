fn main() {
    std::process::exit(arco::cli::main());
}

fn main() {
    std::process::exit(lexa::cli::main());
}

fn main() {
    std::process::exit(shufflevit::cli::main());
}

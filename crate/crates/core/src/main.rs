fn main() {
    std::process::exit(locvalid::cli::main());
}

fn main() {
    std::process::exit(ordpol::cli::main());
}

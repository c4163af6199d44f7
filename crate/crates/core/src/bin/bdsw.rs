fn main() {
    std::process::exit(bdsw::cli::main());
}

fn main() {
    std::process::exit(mvlab::cli::main());
}

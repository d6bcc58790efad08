fn main() {
    std::process::exit(pointspec::cli::main());
}

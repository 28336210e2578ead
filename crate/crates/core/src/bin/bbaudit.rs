fn main() {
    std::process::exit(bbaudit::cli::main_from_args());
}

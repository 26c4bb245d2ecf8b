fn main() {
    std::process::exit(dconrec::cli::main());
}

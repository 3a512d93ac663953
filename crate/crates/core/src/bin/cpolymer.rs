fn main() {
    std::process::exit(cpolymer::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(polybesov::cli::main_with_args(std::env::args_os()));
}

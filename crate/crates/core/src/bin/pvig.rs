fn main() {
    std::process::exit(pvig::cli::main_with_args(std::env::args_os()));
}

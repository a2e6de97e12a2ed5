fn main() {
    std::process::exit(prospect::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(rentwise::cli::main_with_args(std::env::args_os()));
}

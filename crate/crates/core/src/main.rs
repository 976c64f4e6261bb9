fn main() {
    std::process::exit(openvar::cli::main_with_args(std::env::args_os()));
}

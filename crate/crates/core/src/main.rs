fn main() {
    std::process::exit(funvar::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(repcost::cli::main_with_args(std::env::args_os()));
}

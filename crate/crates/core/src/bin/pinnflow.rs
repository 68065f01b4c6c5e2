fn main() {
    std::process::exit(pinnflow::cli::main_with_args(std::env::args_os()));
}

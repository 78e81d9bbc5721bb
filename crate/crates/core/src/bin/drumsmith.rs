fn main() {
    std::process::exit(drumsmith::cli::main_with_args(std::env::args_os()));
}

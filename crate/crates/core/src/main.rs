fn main() {
    std::process::exit(wiae::cli::main_with_args(std::env::args_os()));
}

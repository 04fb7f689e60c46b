fn main() {
    std::process::exit(mixlab_cli::main_with_args(std::env::args_os()));
}

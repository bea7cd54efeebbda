fn main() {
    std::process::exit(spillfree_cli::main_with_args(std::env::args_os()));
}

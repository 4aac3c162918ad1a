fn main() {
    std::process::exit(fracshape_cli::main_with_args(std::env::args_os()));
}

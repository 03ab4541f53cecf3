fn main() {
    std::process::exit(pdeseg_cli::main_with_args(std::env::args_os()));
}

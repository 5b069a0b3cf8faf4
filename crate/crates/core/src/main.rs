fn main() {
    std::process::exit(owc_core::cli::main_with_args(std::env::args_os()));
}

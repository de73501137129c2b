fn main() {
    std::process::exit(pricing_lab::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(inclusion_fwi::cli::main_with_args(std::env::args_os()));
}

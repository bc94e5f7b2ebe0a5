fn main() {
    std::process::exit(copula_equiv::cli::main_with_args(std::env::args_os()));
}

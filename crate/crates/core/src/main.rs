fn main() {
    std::process::exit(ssofqr::cli::main_with_args(std::env::args_os()));
}

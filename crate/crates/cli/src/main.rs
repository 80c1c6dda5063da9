fn main() {
    std::process::exit(cellgmm_cli::main_with_args(std::env::args_os()));
}

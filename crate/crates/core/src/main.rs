fn main() {
    std::process::exit(lfpca::cli::main_with_args(std::env::args_os()));
}

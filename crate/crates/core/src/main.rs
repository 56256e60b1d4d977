fn main() {
    std::process::exit(mpif::cli::main_with_args(std::env::args_os()));
}

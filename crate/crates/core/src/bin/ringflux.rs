fn main() {
    std::process::exit(ringflux::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(spinchaos::cli::main_with_args(std::env::args_os()));
}

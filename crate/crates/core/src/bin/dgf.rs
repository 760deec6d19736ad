fn main() {
    std::process::exit(deepgf::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(qmanifold::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(vibsim::cli::main_with_args(std::env::args_os()));
}

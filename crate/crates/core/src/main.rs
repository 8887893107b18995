fn main() {
    std::process::exit(kropina_nav::cli::main_with_args(std::env::args_os()));
}

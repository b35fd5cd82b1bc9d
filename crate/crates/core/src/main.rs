fn main() {
    std::process::exit(covernet::cli::main_with(std::env::args_os()));
}

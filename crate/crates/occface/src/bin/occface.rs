fn main() {
    std::process::exit(occface::cli::main_with(std::env::args_os()));
}

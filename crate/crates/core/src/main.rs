fn main() {
    std::process::exit(ringflow::cli::main_with(std::env::args_os()));
}

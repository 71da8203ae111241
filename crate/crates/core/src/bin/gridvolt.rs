fn main() {
    std::process::exit(gridvolt::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(nhgauge::cli::main_with(std::env::args_os()));
}

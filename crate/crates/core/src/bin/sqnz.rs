fn main() {
    std::process::exit(sqnz::cli::run(std::env::args_os()));
}

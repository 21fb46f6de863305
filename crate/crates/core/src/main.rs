fn main() {
    std::process::exit(heg::cli::run(std::env::args_os()));
}

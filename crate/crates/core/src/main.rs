fn main() {
    std::process::exit(scvad::cli::run(std::env::args_os()));
}

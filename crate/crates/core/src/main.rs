fn main() {
    std::process::exit(rdiv::cli::run(std::env::args_os()));
}

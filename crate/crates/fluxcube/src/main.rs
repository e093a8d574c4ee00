fn main() {
    std::process::exit(fluxcube::cli::run(std::env::args_os()));
}

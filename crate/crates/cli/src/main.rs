fn main() {
    std::process::exit(pdiff_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(gmdd::cli::run(std::env::args_os()));
}

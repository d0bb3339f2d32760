fn main() {
    std::process::exit(svkit::cli::run(std::env::args_os()));
}

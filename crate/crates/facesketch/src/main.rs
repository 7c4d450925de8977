fn main() {
    std::process::exit(facesketch::cli::run(std::env::args_os()));
}

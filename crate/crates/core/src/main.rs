fn main() {
    std::process::exit(tmclust::cli::run(std::env::args_os()));
}

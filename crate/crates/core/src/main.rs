fn main() {
    std::process::exit(tmson::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(loadbal::cli::run(std::env::args_os()));
}

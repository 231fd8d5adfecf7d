fn main() {
    std::process::exit(adaptovision::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(mocp::cli::run(std::env::args_os()));
}

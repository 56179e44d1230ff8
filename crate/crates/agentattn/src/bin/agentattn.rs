fn main() {
    std::process::exit(agentattn::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(blindsr_cli::run(std::env::args_os().collect()));
}

fn main() {
    std::process::exit(qnls_cli::run(std::env::args_os()));
}

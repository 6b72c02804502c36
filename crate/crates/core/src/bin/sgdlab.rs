fn main() {
    std::process::exit(sgdlab::cli::run_cli(std::env::args_os()));
}

fn main() {
    std::process::exit(fedcso::cli::run_cli(std::env::args_os()));
}

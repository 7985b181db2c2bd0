fn main() {
    std::process::exit(affectcae_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(eigendrift_cli::run(std::env::args_os()));
}

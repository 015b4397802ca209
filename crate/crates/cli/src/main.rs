fn main() {
    std::process::exit(idgnn_cli::run(std::env::args_os()));
}

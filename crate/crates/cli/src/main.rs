fn main() {
    std::process::exit(posegnn_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(vqapc::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(cunet::cli::run(std::env::args_os()));
}

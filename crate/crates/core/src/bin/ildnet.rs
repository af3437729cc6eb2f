fn main() {
    std::process::exit(ildnet::cli::run(std::env::args_os()));
}

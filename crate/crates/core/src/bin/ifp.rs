fn main() {
    std::process::exit(ifp::cli::run(std::env::args_os()));
}

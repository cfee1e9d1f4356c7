fn main() {
    std::process::exit(kdpp_sgd::cli::run(std::env::args_os()));
}

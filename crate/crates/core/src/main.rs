fn main() {
    ssmm::harness::cli::init_logging();
    std::process::exit(ssmm::harness::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(proxy_debias::harness::cli::run(std::env::args_os()));
}

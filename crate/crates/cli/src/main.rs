fn main() {
    std::process::exit(polarlrp_cli::run(std::env::args_os()));
}

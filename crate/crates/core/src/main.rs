fn main() {
    std::process::exit(qcmi::cli::run(std::env::args_os()));
}

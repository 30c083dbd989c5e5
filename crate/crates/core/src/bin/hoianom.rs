fn main() {
    std::process::exit(hoi_anomaly::cli::run(std::env::args_os()));
}

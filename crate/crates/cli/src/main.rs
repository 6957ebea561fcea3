fn main() {
    std::process::exit(clusterhead::run_from_args(std::env::args_os()));
}

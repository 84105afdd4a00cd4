fn main() {
    std::process::exit(radarflow::cli::run_from(std::env::args_os()));
}

fn main() {
    std::process::exit(chainorder::cli::run_from_args(std::env::args_os()));
}

fn main() {
    std::process::exit(seasonal_cusum::cli::run(std::env::args_os()));
}

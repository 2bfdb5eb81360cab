fn main() {
    std::process::exit(planecal::cli::run(std::env::args_os()));
}

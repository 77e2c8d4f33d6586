fn main() {
    std::process::exit(hopdyn_core::cli::run(std::env::args_os()));
}

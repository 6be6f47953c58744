fn main() {
    std::process::exit(cci_core::cli::run(std::env::args_os()));
}

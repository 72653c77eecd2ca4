fn main() {
    std::process::exit(lfpp_core::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(umcf_core::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(vlm_par::cli::run(std::env::args_os()));
}

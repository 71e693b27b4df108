fn main() {
    std::process::exit(mfg_homog::cli::run_from(std::env::args_os()));
}

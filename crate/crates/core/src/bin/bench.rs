fn main() {
    std::process::exit(wfe_reclaim::harness::cli::main_from(std::env::args_os()));
}

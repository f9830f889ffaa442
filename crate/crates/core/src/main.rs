fn main() {
    std::process::exit(rwpre_core::cli::run(std::env::args_os()));
}
